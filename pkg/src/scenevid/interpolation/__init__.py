"""Training-free keyframe interpolation with forward and time-reversed trajectories."""
from .baseline import autoregressive_chain
from .dual import (
    FusionWeights,
    InterpolationConfig,
    Segment,
    chain,
    chain_length,
    fuse,
    interpolate,
    segment_bounds,
    time_reverse,
)
