"""Evaluation metrics: SSIM, D-RMSE and embedding-based scores."""
from .depth import DepthNet, LearnedDepthEstimator, RenderedDepthLookup, d_rmse, frame_key, sequence_d_rmse
from .image import DownsampleEmbedder, consistency, input_similarity, ssim, ssim_video
