"""Depth/normal comparison metrics and normals from depth."""

from __future__ import annotations

import numpy as np

from .geometry import CameraModel


class MetricError(ValueError):
    pass


class ConstantTruth(MetricError):
    pass


class EmptyMask(MetricError):
    pass


class DimensionMismatch(MetricError):
    pass


def _zscore(d):
    sd = d.std()
    return (d - d.mean()) / sd if sd > 0 else np.zeros_like(d)


def nmze(pred, truth) -> float:
    """Normalized mean depth error.

    Each map is z-scored by its own mean and standard deviation, then the mean
    absolute difference is taken. Invariant to positive scale and any bias of
    either map. A constant prediction is z-scored to all zeros.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if truth.std() == 0:
        raise ConstantTruth("ground-truth depth is constant; nMZE is undefined")
    return float(np.abs(_zscore(pred) - _zscore(truth)).mean())


def normal_mae(pred, truth, mask=None) -> float:
    """Mean angle in degrees between unit normal maps (..., 3) over ``mask``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if mask is None:
        mask = np.ones(pred.shape[:-1], bool)
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise EmptyMask("normal MAE mask selects no pixels")
    cos = np.clip(np.einsum("...k,...k->...", pred, truth), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos[mask])).mean())


def world_points(depth, camera: CameraModel) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    q = camera.grid_rays() * depth[..., None]
    return camera.to_world(q)


def normals_from_depth(depth, camera: CameraModel) -> np.ndarray:
    """Unit normals (H, W, 3) from the cross product of world-space tangents.

    Tangents are central differences of the unprojected points (one-sided on
    the border). Normals are flipped to face the camera.
    """
    P = world_points(depth, camera)
    Pu = np.gradient(P, axis=1)
    Pv = np.gradient(P, axis=0)
    n = np.cross(Pu, Pv)
    cam_center = camera.to_world(np.zeros(3))
    toward = cam_center - P
    flip = np.einsum("...k,...k->...", n, toward) < 0
    n[flip] *= -1
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)
