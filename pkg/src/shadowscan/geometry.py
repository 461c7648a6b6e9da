"""Pinhole camera, point lights and image-plane ray rasterization.

Conventions: right-handed camera frame, z forward, origin at the camera
center. Depth always means camera-frame z, never ray length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class DegenerateRay(GeometryError):
    pass


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with projection ``P = K [R|t]``.

    Attributes:
        intrinsics: 3x3 upper-triangular K in pixels.
        image_size: (H, W).
        extrinsics: 3x4 [R|t]; identity when the camera sits at the world origin.
    """

    intrinsics: np.ndarray
    image_size: tuple[int, int]
    extrinsics: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        E = np.asarray(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3) or E.shape != (3, 4):
            raise GeometryError("intrinsics must be 3x3 and extrinsics 3x4")
        if abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 0 or K[2, 2] != 1.0:
            raise GeometryError("intrinsics must be upper-triangular with K[2,2] == 1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal lengths must be positive")
        R = E[:, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise GeometryError("extrinsic rotation is not orthonormal")
        H, W = (int(s) for s in self.image_size)
        if H < 1 or W < 1:
            raise GeometryError("image_size must be positive")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", E)
        object.__setattr__(self, "image_size", (H, W))

    @classmethod
    def simple(cls, height: int, width: int, focal: float | None = None) -> "CameraModel":
        """Square-pixel camera with the principal point at the image center."""
        f = float(max(height, width)) if focal is None else float(focal)
        K = np.array([[f, 0.0, (width - 1) / 2.0], [0.0, f, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
        return cls(K, (height, width))

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.intrinsics)

    def to_camera(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_world(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        return (q - self.translation) @ self.rotation

    def pixel_rays(self, u, v) -> np.ndarray:
        """Camera-frame directions ``K^-1 [u, v, 1]`` (unit z) for pixel coordinates."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        h = np.stack([u, v, np.ones_like(u)], axis=-1)
        return h @ self.K_inv.T

    def grid_rays(self) -> np.ndarray:
        """(H, W, 3) camera-frame rays through every pixel center."""
        H, W = self.image_size
        v, u = np.mgrid[0:H, 0:W].astype(np.float64)
        return self.pixel_rays(u, v)


def project(camera: CameraModel, p) -> np.ndarray:
    """Project world point(s) ``(..., 3)`` to pixel coordinates ``(..., 2)``."""
    q = camera.to_camera(p)
    z = q[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point is at or behind the camera plane")
    h = q @ camera.intrinsics.T
    return h[..., :2] / h[..., 2:3]


def unproject(camera: CameraModel, u, d) -> np.ndarray:
    """World point at camera-frame depth ``d`` on the viewing ray through pixel ``u``."""
    u = np.asarray(u, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepth("depth must be positive")
    q = camera.pixel_rays(u[..., 0], u[..., 1]) * d[..., None]
    return camera.to_world(q)


@dataclass(frozen=True)
class LightSource:
    """Point light at ``position`` (world units).

    Directional lights are approximated by a point light placed far along the
    direction; ``is_directional`` only records that intent.
    """

    position: np.ndarray
    image_projection: np.ndarray
    is_directional: bool = False


def make_light(camera: CameraModel, position, is_directional: bool = False) -> LightSource:
    position = np.asarray(position, dtype=np.float64)
    if camera.to_camera(position)[2] <= 0:
        raise NonPositiveDepth(f"light at {position.tolist()} is behind the camera; its projection is undefined")
    return LightSource(position, project(camera, position), is_directional)


def directional_light(camera: CameraModel, direction, anchor, distance: float | None = None) -> LightSource:
    """Light at ``anchor + distance * direction`` with ``direction`` pointing toward the light.

    A light "above" a scene usually sits between the scene and the camera, so a
    very distant stand-in would cross the camera plane. With ``distance=None``
    the light is placed at 1000 units, or at 90% of the way to the camera plane
    when the direction points toward the camera.
    """
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    anchor = np.asarray(anchor, dtype=np.float64)
    if distance is None:
        toward = -(camera.rotation @ direction)[2]
        distance = 1e3
        if toward > 0:
            distance = min(distance, 0.9 * camera.to_camera(anchor)[2] / toward)
    return make_light(camera, anchor + distance * direction, is_directional=True)


def _clip_interval(start, delta, lo, hi):
    """Alpha interval where ``start + alpha * delta`` lies in ``[lo, hi]``."""
    if delta == 0:
        return (0.0, 1.0) if lo <= start <= hi else (1.0, 0.0)
    a, b = (lo - start) / delta, (hi - start) / delta
    return (min(a, b), max(a, b))


def ray_alphas(origin, target, image_size, supersample: int = 1) -> np.ndarray:
    """Discrete alpha values of in-frame samples on the segment origin -> target.

    The lattice is ``alpha = k / n`` with ``n = ceil(max(|du|, |dv|) * supersample)``,
    so consecutive samples are about ``1 / supersample`` pixels apart along the
    dominant axis. Samples outside ``[-0.5, W - 0.5) x [-0.5, H - 0.5)`` are dropped.
    """
    H, W = image_size
    ox, oy = float(origin[0]), float(origin[1])
    tx, ty = float(target[0]), float(target[1])
    dx, dy = tx - ox, ty - oy
    if max(abs(dx), abs(dy)) < 0.5:
        raise DegenerateRay(f"light projection {origin!r} coincides with target {target!r}")
    n = int(np.ceil(max(abs(dx), abs(dy)) * supersample - 1e-9))
    ax = _clip_interval(ox, dx, -0.5, W - 0.5)
    ay = _clip_interval(oy, dy, -0.5, H - 0.5)
    lo, hi = max(ax[0], ay[0], 0.0), min(ax[1], ay[1], 1.0)
    k = np.arange(max(int(np.floor(lo * n)) - 1, 0), n + 1)
    alphas = k / n
    pts_u = ox + alphas * dx
    pts_v = oy + alphas * dy
    keep = (pts_u >= -0.5) & (pts_u < W - 0.5) & (pts_v >= -0.5) & (pts_v < H - 0.5)
    return alphas[keep]


def image_ray(light: LightSource, target, image_size, supersample: int = 1) -> np.ndarray:
    """In-frame samples (K, 2) of the image segment from the light's projection to ``target``.

    Ordered by increasing alpha; the last row is ``target`` itself.
    """
    H, W = image_size
    target = np.asarray(target, dtype=np.float64)
    if not (-0.5 <= target[0] < W - 0.5 and -0.5 <= target[1] < H - 0.5):
        raise GeometryError(f"target {target.tolist()} is outside the {H}x{W} image")
    origin = np.asarray(light.image_projection if isinstance(light, LightSource) else light, dtype=np.float64)
    alphas = ray_alphas(origin, target, image_size, supersample)
    return origin[None, :] * (1.0 - alphas[:, None]) + target[None, :] * alphas[:, None]
