"""Toy image and video denoisers with tap points, control and conditioning."""
from .checkpoint import load_denoiser, save_denoiser
from .codec import decode, encode, to_hwc
from .data import DenoisingData, image_dataset, random_scene, video_dataset
from .text import PromptEmbedding, embed_batch, template
from .train import TrainConfig, TrainResult, build_image_denoiser, build_video_denoiser, denoising_loss, train_denoiser
from .unet import (
    ControlBranch,
    ControlResidualSet,
    DenoiserSpec,
    ImageDenoiser,
    ToyUNet,
    VideoDenoiser,
    normalize_depth,
)
