from .hooks import TapHooks
from .latent import Latent
from .samplers import (
    ddim_invert,
    ddim_sample,
    ddim_step,
    ddim_timesteps,
    edm_invert,
    edm_sample,
    edm_step,
    ladder_indices,
)
from .schedule import NOISE_LADDER, VARIANCE_PRESERVING, NoiseSchedule, add_noise
from .trace import FeatureTrace
