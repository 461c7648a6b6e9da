"""Depth estimation from binary shadow maps under many point lights."""

from .depth_field import DepthField, EncodingSpec
from .geometry import CameraModel, LightSource, make_light, project, unproject
from .optimizer import FitConfig, fit
from .renderer import ShadowMap, r3_oracle, render_line, render_shadow_map_r2

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "DepthField", "EncodingSpec", "FitConfig", "LightSource", "ShadowMap",
    "fit", "make_light", "project", "r3_oracle", "render_line", "render_shadow_map_r2", "unproject",
]
