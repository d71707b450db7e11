"""Geometry-guided keyframes: inversion, depth control, feature injection, extended attention."""
from .attention import ExtendedAttentionProcessor, attention_weights, concat_frames, extended_attention
from .generate import KeyframeConfig, KeyframeSet, generate_keyframes, keyframe_indices
from .injection import FeatureInjector, InjectionConfig, expected_firings, inject_features, tap_masks
