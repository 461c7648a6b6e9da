"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import depth_field as dfm
from .depth_field import EncodingSpec
from .geometry import CameraModel
from .optimizer import grid_loss, loss_and_grad
from .renderer import _bilinear_corners, boundary_pixels, render_line


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    count: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.2e} < {self.tolerance:.0e} over {self.count}"


def rel_error(a, b, floor: float = 1e-12) -> float:
    return float(abs(a - b) / max(abs(a), abs(b), floor))


def _rel_errors(analytic, numeric, abs_floor):
    """Relative error, treating pairs that are both below ``abs_floor`` as equal."""
    errs = []
    for a, n in zip(analytic, numeric):
        if max(abs(a), abs(n)) < abs_floor:
            errs.append(0.0)
        else:
            errs.append(rel_error(a, n))
    return errs


def small_scene(size: int = 16, n_lights: int = 4, seed: int = 0):
    from .synthetic import bake_scene, make_light_rig, make_terrain

    cam = CameraModel.simple(size, size)
    hm = make_terrain("gaussian_bumps", size, size, seed=seed, count=2, sigma=(size / 6, size / 4))
    lights = make_light_rig(cam, n_lights, radius=3.0, elevation=35.0)
    return bake_scene(hm, cam, lights, seed=seed)


def _field_fd(f, pts, up, idx, h):
    num = []
    for i in idx:
        p = f.params.copy()
        p[i] += h
        fp = float(up @ f.with_params(p)(pts))
        p[i] -= 2 * h
        fm = float(up @ f.with_params(p)(pts))
        num.append((fp - fm) / (2 * h))
    return num


def field_point_check(seed: int = 0, n_params: int = 20, h: float = 1e-4, tol: float = 1e-4,
                      size: int = 64) -> CheckResult:
    """One point, upstream 1, default-sized field: d depth / d params on random coordinates."""
    rng = np.random.default_rng(seed)
    f = dfm.init(seed, (size, size), depth_center=4.0)
    pts = rng.uniform(0, size - 1, size=(1, 2))
    up = np.ones(1)
    _, tape = f.eval_batch_with_grads(pts)
    grad = tape.backward(up)
    idx = rng.choice(f.params.size, size=n_params, replace=False)
    errs = _rel_errors(grad[idx], _field_fd(f, pts, up, idx, h), abs_floor=1e-9)
    return CheckResult("field params, single point", max(errs), tol, n_params)


def field_param_check(seed: int = 0, n_params: int = 20, h: float = 1e-5, tol: float = 1e-4,
                      size: int = 16, n_points: int = 8) -> list[CheckResult]:
    """d(sum w_i * depth_i)/d params vs central differences, reported per layer.

    Truncation error of the central difference grows like (omega * h)**2 in the
    deep sine layers, so the step here is smaller than for the single-point check.
    """
    rng = np.random.default_rng(seed)
    f = dfm.init(seed, (size, size), encoding=EncodingSpec(2), depth_center=2.0, depth_offset=0.1)
    pts = rng.uniform(0, size - 1, size=(n_points, 2))
    up = rng.normal(size=n_points)
    _, tape = f.eval_batch_with_grads(pts)
    grad = tape.backward(up)
    results = []
    start = 0
    for l, (a, b) in enumerate(zip(f.layer_sizes[:-1], f.layer_sizes[1:])):
        n = a * b + b
        idx = start + rng.choice(n, size=min(n_params, n), replace=False)
        start += n
        errs = _rel_errors(grad[idx], _field_fd(f, pts, up, idx, h), abs_floor=1e-7)
        results.append(CheckResult(f"field layer {l}", max(errs), tol, len(idx)))
    return results


def line_depth_check(tau: float = 0.1, seed: int = 0, h: float = 1e-6, tol: float = 1e-3) -> CheckResult:
    """d(sum w_i * shadow_i)/d depth along one scan line, explicit depth grid."""
    scene = small_scene(seed=seed)
    rng = np.random.default_rng(seed)
    grid = scene.height_map + rng.normal(scale=0.02, size=scene.height_map.shape)
    light = scene.lights[0]
    H, W = grid.shape
    border = boundary_pixels((H, W))
    target = border[np.argmax(np.linalg.norm(border - light.image_projection, axis=1))]
    line = render_line(grid, scene.camera, light, target, tau)
    w = rng.normal(size=len(line.shadow))
    g_samples = line.depth_grad(w)
    idx, wts = _bilinear_corners(line.image_points[:, 0], line.image_points[:, 1], (H, W))
    g_grid = np.bincount(idx.ravel(), weights=(wts * g_samples[:, None]).ravel(), minlength=H * W)
    touched = np.unique(idx.ravel())
    num = []
    for k in touched:
        gp = grid.copy().ravel()
        gp[k] += h
        fp = w @ render_line(gp.reshape(H, W), scene.camera, light, target, tau).shadow
        gp[k] -= 2 * h
        fm = w @ render_line(gp.reshape(H, W), scene.camera, light, target, tau).shadow
        num.append((fp - fm) / (2 * h))
    errs = _rel_errors(g_grid[touched], num, abs_floor=1e-6)
    return CheckResult(f"scan line depth (tau={tau})", max(errs), tol, len(touched))


def map_depth_check(tau: float = 0.1, seed: int = 0, n_pixels: int = 20, h: float = 1e-6,
                    tol: float = 1e-3) -> CheckResult:
    """Boundary-ray shadow loss vs individual depth pixels."""
    scene = small_scene(seed=seed)
    rng = np.random.default_rng(seed + 1)
    grid = scene.height_map + rng.normal(scale=0.02, size=scene.height_map.shape)
    terms, g = grid_loss(grid, scene, tau, lam=0.0)
    flat = g.ravel()
    pick = rng.choice(np.flatnonzero(np.abs(flat) > 1e-8), size=n_pixels, replace=False)
    num = []
    for k in pick:
        gp = grid.copy().ravel()
        gp[k] += h
        lp = grid_loss(gp.reshape(grid.shape), scene, tau, lam=0.0)[0].total
        gp[k] -= 2 * h
        lm = grid_loss(gp.reshape(grid.shape), scene, tau, lam=0.0)[0].total
        num.append((lp - lm) / (2 * h))
    return CheckResult(f"shadow loss vs depth (tau={tau})", max(_rel_errors(flat[pick], num, 1e-9)), tol, n_pixels)


def end_to_end_check(tau: float = 0.1, seed: int = 0, n_params: int = 20, h: float = 1e-5,
                     tol: float = 1e-3, lam: float = 1e-4) -> CheckResult:
    """d(total loss)/d params on a 16x16 scene vs central differences."""
    scene = small_scene(seed=seed)
    f = dfm.init(seed, scene.camera.image_size, encoding=EncodingSpec(2), depth_center=4.0,
                 depth_offset=0.2, depth_scale=3.0)
    terms, grad = loss_and_grad(f, scene, tau, stride=1, lam=lam)
    rng = np.random.default_rng(seed + 2)
    cand = np.flatnonzero(np.abs(grad) > 1e-6 * np.abs(grad).max())
    pick = rng.choice(cand, size=min(n_params, len(cand)), replace=False)
    num = []
    for i in pick:
        p = f.params.copy()
        p[i] += h
        lp = loss_and_grad(f.with_params(p), scene, tau, lam=lam)[0].total
        p[i] -= 2 * h
        lm = loss_and_grad(f.with_params(p), scene, tau, lam=lam)[0].total
        num.append((lp - lm) / (2 * h))
    return CheckResult(f"end-to-end loss vs params (tau={tau})", max(_rel_errors(grad[pick], num, 1e-12)), tol, len(pick))


def run_all(seed: int = 0) -> list[CheckResult]:
    out = [field_point_check(seed)] + field_param_check(seed)
    out.append(line_depth_check(0.1, seed))
    out.append(map_depth_check(0.1, seed))
    out.append(end_to_end_check(0.1, seed))
    return out
