"""LoRA customization of the image denoiser with multi-view augmentation."""
from .lora import LoRAAdapter, LoRALinear, attach_lora, lora_targets
from .loss import NoisedBatch, customization_loss, customization_terms, downsample_mask, make_noised
from .train import CustomizationConfig, CustomizationResult, image_loss, train_customization
