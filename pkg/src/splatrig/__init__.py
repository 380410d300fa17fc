"""Headless renderer for skinned, mesh-bound Gaussian splat avatars."""

from .asset import AvatarAsset, SynthSpec, generate_synthetic_asset, load_asset, save_asset, validate_asset
from .pipeline import RenderConfig, Renderer, StereoCamera, render_frame, render_stereo, run_sequence
from .raster import Camera

__version__ = "0.1.0"

__all__ = [
    "AvatarAsset", "Camera", "RenderConfig", "Renderer", "StereoCamera", "SynthSpec", "generate_synthetic_asset",
    "load_asset", "render_frame", "render_stereo", "run_sequence", "save_asset", "validate_asset",
]
