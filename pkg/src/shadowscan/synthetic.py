"""Analytic terrains, light rigs and oracle-baked scenes.

Terrains are camera-frame depth grids: a base plane at ``base_depth`` with
features raised toward the camera (smaller depth). Grids are rounded to
float32-representable values so they survive the on-disk float32 format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, LightSource, make_light, NonPositiveDepth
from .renderer import ShadowMap, render_shadow_map_r3_oracle

BASE_DEPTH = 4.0
TERRAINS = ("plane", "step", "pillar", "gaussian_bumps", "ridge")
PATTERNS = ("ring", "dome", "random")


class InvalidParams(ValueError):
    pass


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def make_terrain(kind: str, height: int = 64, width: int = 64, seed: int = 0,
                 base_depth: float = BASE_DEPTH, **params) -> np.ndarray:
    """Depth grid for one of ``TERRAINS``.

    Feature sizes are given in pixels and heights in world units:

    * ``step``: ``column`` (default W // 2), ``step_height`` (0.5)
    * ``pillar``: ``center`` (u, v), ``radius`` (W / 10), ``pillar_height`` (0.8)
    * ``gaussian_bumps``: ``count`` (2), ``amplitude`` range (0.8, 1.4),
      ``sigma`` range in pixels (W / 12, W / 8)
    * ``ridge``: ``angle`` in degrees (30), ``ridge_height`` (0.5), ``sigma`` (W / 12)
    """
    if height < 2 or width < 2:
        raise InvalidParams("terrain needs at least 2x2 pixels")
    if base_depth <= 0:
        raise InvalidParams("base_depth must be positive")
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    raise_by = np.zeros((height, width))
    if kind == "plane":
        pass
    elif kind == "step":
        c = params.get("column", width // 2)
        if not 0 <= c < width:
            raise InvalidParams(f"step column {c} outside 0..{width - 1}")
        raise_by[:, c:] = params.get("step_height", 0.5)
    elif kind == "pillar":
        cu, cv = params.get("center", ((width - 1) / 2, (height - 1) / 2))
        r = params.get("radius", width / 10)
        raise_by[(u - cu) ** 2 + (v - cv) ** 2 <= r * r] = params.get("pillar_height", 0.8)
    elif kind == "gaussian_bumps":
        rng = np.random.default_rng(seed)
        count = int(params.get("count", 2))
        amp = params.get("amplitude", (0.8, 1.4))
        sig = params.get("sigma", (width / 12, width / 8))
        margin = params.get("margin", 0.2)
        if count < 1:
            raise InvalidParams("gaussian_bumps needs count >= 1")
        for _ in range(count):
            cu = rng.uniform(margin * width, (1 - margin) * width)
            cv = rng.uniform(margin * height, (1 - margin) * height)
            a = rng.uniform(*amp)
            s = rng.uniform(*sig)
            raise_by += a * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * s * s))
    elif kind == "ridge":
        th = np.deg2rad(params.get("angle", 30.0))
        s = params.get("sigma", width / 12)
        dist = (u - (width - 1) / 2) * np.sin(th) - (v - (height - 1) / 2) * np.cos(th)
        raise_by = params.get("ridge_height", 0.5) * np.exp(-dist**2 / (2 * s * s))
    else:
        raise InvalidParams(f"unknown terrain kind {kind!r}; expected one of {TERRAINS}")
    depth = base_depth - raise_by
    if np.any(depth <= 0):
        raise InvalidParams("terrain rises to or through the camera plane")
    return _f32(depth)


def scene_center(camera: CameraModel, base_depth: float = BASE_DEPTH) -> np.ndarray:
    """World point of the principal ray on the base plane."""
    return camera.to_world(np.array([0.0, 0.0, base_depth]))


def make_light_rig(camera: CameraModel, n: int, radius: float = 3.0, height: float | None = None,
                   pattern: str = "ring", seed: int = 0, elevation: float | None = None,
                   base_depth: float = BASE_DEPTH) -> list[LightSource]:
    """Point lights around the scene center; "up" is toward the camera (-z).

    * ``ring``: ``n`` lights evenly spaced in azimuth. Either pass ``height``
      above the base plane (with ``radius`` the horizontal circle radius) or
      ``elevation`` in degrees (then ``radius`` is the distance to the center).
    * ``dome``: ``n`` lights at distance ``radius`` on a golden-angle spiral
      over elevations 20-80 degrees.
    * ``random``: ``n`` lights at distance ``radius``, uniform azimuth,
      elevation uniform in 15-85 degrees.
    """
    if n < 1:
        raise InvalidParams("light rig needs n >= 1")
    center = scene_center(camera, base_depth)
    if pattern == "ring":
        az = 2 * np.pi * np.arange(n) / n
        if elevation is not None:
            e = np.deg2rad(elevation)
            horiz, up = radius * np.cos(e), radius * np.sin(e)
        else:
            horiz, up = radius, (radius if height is None else height)
        offs = np.stack([horiz * np.cos(az), horiz * np.sin(az), -up * np.ones(n)], axis=1)
    elif pattern == "dome":
        az = np.arange(n) * np.pi * (3 - np.sqrt(5))
        el = np.deg2rad(np.linspace(20, 80, n)) if n > 1 else np.array([np.deg2rad(50)])
        offs = radius * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), -np.sin(el)], axis=1)
    elif pattern == "random":
        rng = np.random.default_rng(seed)
        az = rng.uniform(0, 2 * np.pi, n)
        el = np.deg2rad(rng.uniform(15, 85, n))
        offs = radius * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), -np.sin(el)], axis=1)
    else:
        raise InvalidParams(f"unknown light pattern {pattern!r}; expected one of {PATTERNS}")
    lights = []
    for o in offs:
        try:
            lights.append(make_light(camera, center + o))
        except NonPositiveDepth as exc:
            raise InvalidParams(str(exc)) from None
    return lights


@dataclass
class SyntheticScene:
    height_map: np.ndarray
    camera: CameraModel
    lights: list
    shadow_maps: list = field(default_factory=list)
    seed: int | None = None

    def shadow_stack(self) -> np.ndarray:
        return np.stack([m.values for m in self.shadow_maps])


def bake_scene(height_map, camera: CameraModel, lights, seed: int | None = None,
               supersample: int = 1) -> SyntheticScene:
    """Ground-truth binary shadow maps for every light via the exact walker."""
    hm = np.asarray(height_map, dtype=np.float64)
    if hm.shape != tuple(camera.image_size):
        raise InvalidParams("height map does not match camera image size")
    if np.any(hm <= 0):
        raise InvalidParams("height map must hold positive depths")
    maps = [
        render_shadow_map_r3_oracle(hm, camera, l, supersample=supersample, light_index=j)
        for j, l in enumerate(lights)
    ]
    return SyntheticScene(hm, camera, list(lights), maps, seed)


def shadow_fraction(scene: SyntheticScene) -> float:
    return float(1.0 - scene.shadow_stack().mean())


def bump_scene(size: int = 64, n_lights: int = 16, elevation: float = 40.0, seed: int = 0,
               distance: float = 3.0) -> SyntheticScene:
    """The reference benchmark: two gaussian bumps under a ring of lights."""
    cam = CameraModel.simple(size, size)
    hm = make_terrain("gaussian_bumps", size, size, seed=seed, count=2)
    lights = make_light_rig(cam, n_lights, radius=distance, elevation=elevation)
    return bake_scene(hm, cam, lights, seed=seed)
