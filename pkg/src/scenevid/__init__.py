"""3D-guided image-to-video synthesis at desk scale."""

__version__ = "0.1.0"
