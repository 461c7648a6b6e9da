"""Differentiable shadow line scan.

A scan walks an image-plane segment starting at the light's projection,
lifts every sample to 3D with its depth, and measures the angle between the
light->sample vector and the light->first-sample vector. A sample is lit when
its angle reaches the running maximum of all earlier angles; the soft shadow
is ``2 * sigmoid((angle - running_max) / tau)``.

Dense maps are assembled from boundary rays (each sample of every ray writes
into its nearest pixel, so one ray shades a whole line of pixels). An exact
per-pixel walker with bilinear depth lookup serves as the hard reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, DegenerateRay, LightSource, ray_alphas
from .depth_field import DepthField

COS_CLIP = 1.0 - 1e-7
EPS = 1e-8


@dataclass(frozen=True)
class SigmoidTemperature:
    """Piecewise-constant temperature: ``schedule`` is [(epoch_fraction, tau), ...]."""

    schedule: tuple = ((0.0, 0.3), (0.25, 0.1), (0.5, 0.03), (0.75, 0.01))

    def __post_init__(self):
        taus = [t for _, t in self.schedule]
        if not taus or any(t <= 0 for t in taus):
            raise ValueError("temperatures must be positive")
        if any(b >= a for a, b in zip(taus, taus[1:])):
            raise ValueError("temperature schedule must strictly decrease")

    def at(self, fraction: float) -> float:
        tau = self.schedule[0][1]
        for start, t in self.schedule:
            if fraction >= start:
                tau = t
        return tau


def _sigmoid(x):
    """Logistic function; stays strictly positive down to x ~ -745."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# batched scan kernel
# ---------------------------------------------------------------------------


class ScanBatch:
    """Forward/backward of ``R`` padded scan lines at once.

    ``points`` is (R, T, 3) world points, ``valid`` (R, T) a prefix mask.
    """

    def __init__(self, points, valid, light_position, tau: float | None):
        self.points = points
        self.valid = valid
        L = np.asarray(light_position, dtype=np.float64)
        V = L - points
        V0 = V[:, :1, :]
        n = np.sqrt(np.einsum("rtk,rtk->rt", V, V))
        n0 = n[:, :1]
        dot = np.einsum("rtk,rtk->rt", V0, V)
        den = n0 * n + EPS
        c = dot / den
        cc = np.clip(c, -COS_CLIP, COS_CLIP)
        ang = np.arccos(cc)
        ang[:, 0] = 0.0
        ang = np.where(valid, ang, 0.0)
        running = np.maximum.accumulate(ang, axis=1)
        prev = np.concatenate([np.full((ang.shape[0], 1), -np.inf), running[:, :-1]], axis=1)
        T = ang.shape[1]
        # earliest sample attaining the running max
        holder = np.maximum.accumulate(np.where(ang > prev, np.arange(T)[None, :], 0), axis=1)
        self.V, self.V0, self.n, self.n0 = V, V0, n, n0
        self.dot, self.den, self.c, self.cc = dot, den, c, cc
        self.angles, self.running_max, self.holder = ang, running, holder
        self.tau = tau
        if tau is not None:
            self.x = (ang - running) / tau
            self.shadow = np.where(valid, 2.0 * _sigmoid(self.x), 0.0)

    def hard_shadow(self) -> np.ndarray:
        return np.where(self.valid, (self.angles >= self.running_max).astype(np.float64), 0.0)

    def backward(self, grad_shadow) -> np.ndarray:
        """``dL/d points`` (R, T, 3) given ``dL/d shadow`` (R, T)."""
        g = np.where(self.valid, grad_shadow, 0.0)
        sig = _sigmoid(self.x)
        g_x = g * 2.0 * sig * (1.0 - sig) / self.tau
        g_ang = g_x.copy()
        R, T = g.shape
        # running max routes its gradient to the holder sample
        flat_holder = (self.holder + T * np.arange(R)[:, None]).ravel()
        g_ang += np.bincount(flat_holder, weights=-g_x.ravel(), minlength=R * T).reshape(R, T)
        g_ang[:, 0] = 0.0
        g_ang = np.where(self.valid, g_ang, 0.0)
        inside = np.abs(self.c) < COS_CLIP
        g_c = np.where(inside, -g_ang / np.sqrt(1.0 - self.cc**2), 0.0)
        g_dot = g_c / self.den
        g_den = -g_c * self.dot / self.den**2
        g_n = g_den * self.n0
        g_n0 = (g_den * self.n).sum(axis=1, keepdims=True)
        safe_n = np.where(self.n > 0, self.n, 1.0)
        g_V = g_dot[..., None] * self.V0 + (g_n / safe_n)[..., None] * self.V
        g_V0 = (g_dot[..., None] * self.V).sum(axis=1) + (g_n0 / safe_n[:, :1]) * self.V0[:, 0, :]
        g_V[:, 0, :] += g_V0
        return -g_V


def scan_angles(light, world_points) -> np.ndarray:
    """Angles between the light->first-point vector and each light->point vector."""
    L = light.position if isinstance(light, LightSource) else light
    pts = np.asarray(world_points, dtype=np.float64)[None]
    return ScanBatch(pts, np.ones(pts.shape[:2], bool), L, None).angles[0]


def line_shadow(angles, tau: float) -> np.ndarray:
    """Soft shadows ``2 sigmoid((ang - cummax(ang)) / tau)`` along one line."""
    angles = np.asarray(angles, dtype=np.float64)
    running = np.maximum.accumulate(angles)
    return 2.0 * _sigmoid((angles - running) / tau)


# ---------------------------------------------------------------------------
# single line
# ---------------------------------------------------------------------------


@dataclass
class ScanLine:
    light_index: int
    alphas: np.ndarray
    image_points: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray
    world_points: np.ndarray
    angles: np.ndarray
    running_max: np.ndarray
    shadow: np.ndarray
    _batch: ScanBatch = field(repr=False, default=None)
    _dirs: np.ndarray = field(repr=False, default=None)
    _tape: object = field(repr=False, default=None)

    def depth_grad(self, grad_shadow) -> np.ndarray:
        """``dL/d depth`` per sample given ``dL/d shadow`` per sample."""
        g_pts = self._batch.backward(np.asarray(grad_shadow, dtype=np.float64)[None])[0]
        return np.einsum("tk,tk->t", g_pts, self._dirs)

    def param_grad(self, grad_shadow) -> np.ndarray:
        if self._tape is None:
            raise TypeError("line was rendered from a fixed depth grid, not a DepthField")
        return self._tape.backward(self.depth_grad(grad_shadow))


def _world_dirs(camera: CameraModel, u, v):
    """World-space direction per unit depth and the camera center."""
    rays = camera.pixel_rays(u, v)
    return rays @ camera.rotation, -camera.translation @ camera.rotation


def render_line(depth, camera: CameraModel, light: LightSource, target, tau: float | None,
                light_index: int = 0, supersample: int = 1) -> ScanLine:
    """Scan from the light's projection to ``target`` (``tau=None``: hard test).

    ``depth`` is either a DepthField, queried at the exact sample positions, or
    an (H, W) depth grid, interpolated bilinearly.
    """
    H, W = camera.image_size
    alphas = ray_alphas(light.image_projection, target, (H, W), supersample)
    ell = np.asarray(light.image_projection)
    pts2 = ell[None, :] * (1 - alphas[:, None]) + np.asarray(target, float)[None, :] * alphas[:, None]
    pix = np.floor(pts2 + 0.5).astype(np.int64)
    tape = None
    if isinstance(depth, DepthField):
        d, tape = depth.eval_batch_with_grads(pts2)
    else:
        d = _bilinear(np.asarray(depth, dtype=np.float64), pts2[:, 0], pts2[:, 1])
    dirs, center = _world_dirs(camera, pts2[:, 0], pts2[:, 1])
    world = center + d[:, None] * dirs
    batch = ScanBatch(world[None], np.ones((1, len(d)), bool), light.position, tau)
    shadow = batch.hard_shadow()[0] if tau is None else batch.shadow[0]
    return ScanLine(
        light_index, alphas, pts2, pix, d, world, batch.angles[0], batch.running_max[0],
        shadow, batch, dirs, tape,
    )


# ---------------------------------------------------------------------------
# dense maps from boundary rays
# ---------------------------------------------------------------------------


@dataclass
class ShadowMap:
    """Per-pixel shadow values in [0, 1] (1 = lit) and the number of samples per pixel."""

    values: np.ndarray
    light_index: int = 0
    coverage: np.ndarray | None = None

    @property
    def mask(self) -> np.ndarray:
        if self.coverage is None:
            return np.ones(self.values.shape, bool)
        return self.coverage > 0


def boundary_pixels(image_size) -> np.ndarray:
    """Border pixel centers, clockwise from the top-left corner, shape (2H + 2W - 4, 2)."""
    H, W = image_size
    if H == 1 or W == 1:
        return np.array([(u, v) for v in range(H) for u in range(W)], dtype=np.float64)
    top = [(u, 0) for u in range(W)]
    right = [(W - 1, v) for v in range(1, H)]
    bottom = [(u, H - 1) for u in range(W - 2, -1, -1)]
    left = [(0, v) for v in range(H - 2, 0, -1)]
    return np.array(top + right + bottom + left, dtype=np.float64)


@dataclass
class RayBundle:
    """Depth-independent sample layout for one light.

    Samples sit at their exact positions on each ray; depth is interpolated
    bilinearly from the pixel lattice and the shadow value is written to the
    nearest pixel.
    """

    pixel_index: np.ndarray  # (R, T) nearest flat pixel index, 0 where invalid
    valid: np.ndarray  # (R, T)
    corner_index: np.ndarray  # (R, T, 4) flat indices of the bilinear corners
    corner_weight: np.ndarray  # (R, T, 4)
    dirs: np.ndarray  # (R, T, 3) world direction per unit depth
    center: np.ndarray  # (3,) camera center in world
    coverage: np.ndarray  # (H, W)
    image_size: tuple

    @property
    def num_samples(self) -> int:
        return int(self.valid.sum())

    def interpolate(self, depth_flat) -> np.ndarray:
        return np.einsum("rtc,rtc->rt", depth_flat[self.corner_index], self.corner_weight)

    def scatter_depth(self, g_depth) -> np.ndarray:
        """Adjoint of :meth:`interpolate`: (R, T) sample gradients -> flat pixel gradients."""
        H, W = self.image_size
        w = np.where(self.valid[..., None], self.corner_weight * g_depth[..., None], 0.0)
        return np.bincount(self.corner_index.ravel(), weights=w.ravel(), minlength=H * W)


def _pack_rays(origin, targets, image_size, supersample):
    """Fractional sample coordinates for many segments sharing one origin.

    Returns (R, T, 2) coordinates and an (R, T) prefix mask; targets at the
    origin (degenerate) produce rays with no samples.
    """
    origin = np.asarray(origin, dtype=np.float64)
    rows = []
    for t in targets:
        try:
            rows.append(ray_alphas(origin, t, image_size, supersample))
        except DegenerateRay:
            rows.append(np.zeros(0))
    T = max(max((len(r) for r in rows), default=0), 1)
    alpha = np.zeros((len(rows), T))
    valid = np.zeros((len(rows), T), bool)
    for i, r in enumerate(rows):
        alpha[i, : len(r)] = r
        valid[i, : len(r)] = True
    targets = np.asarray(targets, dtype=np.float64)
    coords = origin[None, None, :] * (1 - alpha[..., None]) + targets[:, None, :] * alpha[..., None]
    return coords, valid


def _bilinear_corners(u, v, image_size):
    H, W = image_size
    u = np.clip(u, 0.0, W - 1.0)
    v = np.clip(v, 0.0, H - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.int64), max(W - 2, 0))
    v0 = np.minimum(np.floor(v).astype(np.int64), max(H - 2, 0))
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    fu, fv = u - u0, v - v0
    idx = np.stack([v0 * W + u0, v0 * W + u1, v1 * W + u0, v1 * W + u1], axis=-1)
    wts = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1)
    return idx, wts


def make_ray_bundle(camera: CameraModel, light: LightSource, stride: int = 1, supersample: int = 1) -> RayBundle:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    H, W = camera.image_size
    targets = boundary_pixels((H, W))[::stride]
    coords, valid = _pack_rays(light.image_projection, targets, (H, W), supersample)
    pix = np.floor(coords + 0.5).astype(np.int64)
    pix[..., 0] = np.clip(pix[..., 0], 0, W - 1)
    pix[..., 1] = np.clip(pix[..., 1], 0, H - 1)
    idx = np.where(valid, pix[..., 1] * W + pix[..., 0], 0)
    cidx, cw = _bilinear_corners(coords[..., 0], coords[..., 1], (H, W))
    dirs, center = _world_dirs(camera, coords[..., 0], coords[..., 1])
    cov = np.bincount(idx[valid], minlength=H * W).reshape(H, W)
    return RayBundle(idx, valid, cidx, cw, dirs, center, cov, (H, W))


class RenderedMap:
    """A rendered soft shadow map that can pull loss gradients back to the depth grid."""

    def __init__(self, bundle: RayBundle, batch: ScanBatch, light_index: int):
        self.bundle = bundle
        self.batch = batch
        H, W = bundle.image_size
        idx, valid = bundle.pixel_index, bundle.valid
        shadow = batch.hard_shadow() if batch.tau is None else batch.shadow
        acc = np.bincount(idx[valid], weights=shadow[valid], minlength=H * W).reshape(H, W)
        cov = bundle.coverage
        values = np.where(cov > 0, acc / np.maximum(cov, 1), 0.0)
        self.shadow_map = ShadowMap(values, light_index, cov.copy())

    def depth_grad(self, grad_map) -> np.ndarray:
        """``dL/d depth`` (H, W) given ``dL/d values`` (H, W)."""
        if self.batch.tau is None:
            raise ValueError("hard (tau=None) renders are not differentiable")
        b = self.bundle
        cov = b.coverage.ravel()
        per_pixel = np.asarray(grad_map, dtype=np.float64).ravel() / np.maximum(cov, 1)
        g_s = np.where(b.valid, per_pixel[b.pixel_index], 0.0)
        g_pts = self.batch.backward(g_s)
        g_d = np.einsum("rtk,rtk->rt", g_pts, b.dirs)
        return b.scatter_depth(g_d).reshape(b.image_size)


def render_depth_grid_r2(depth_grid, camera: CameraModel, light: LightSource, tau: float,
                         stride: int = 1, supersample: int = 1, light_index: int = 0,
                         bundle: RayBundle | None = None) -> RenderedMap:
    """Boundary-ray rendering of an explicit (H, W) depth grid."""
    if bundle is None:
        bundle = make_ray_bundle(camera, light, stride, supersample)
    d = bundle.interpolate(np.asarray(depth_grid, dtype=np.float64).ravel())
    pts = bundle.center + d[..., None] * bundle.dirs
    batch = ScanBatch(pts, bundle.valid, light.position, tau)
    return RenderedMap(bundle, batch, light_index)


def render_shadow_map_r2(depth, camera: CameraModel, light: LightSource, tau: float,
                         stride: int = 1, supersample: int = 1, light_index: int = 0) -> ShadowMap:
    """Dense soft shadow map from rays to every ``stride``-th boundary pixel.

    ``depth`` may be a DepthField (evaluated on the pixel lattice) or an (H, W) grid.
    ``tau=None`` applies the hard visibility test per sample instead of the sigmoid.
    Pixels no ray reaches have coverage 0 and value 0.
    """
    grid = depth.depth_grid() if isinstance(depth, DepthField) else depth
    return render_depth_grid_r2(grid, camera, light, tau, stride, supersample, light_index).shadow_map


# ---------------------------------------------------------------------------
# exact per-pixel reference
# ---------------------------------------------------------------------------


def _bilinear(grid, u, v):
    idx, wts = _bilinear_corners(u, v, grid.shape)
    return (grid.ravel()[idx] * wts).sum(axis=-1)


def _pixel_walk_samples(origin, image_size, supersample):
    """Vectorized ``ray_alphas`` from one origin to every pixel center.

    Returns (P, T) alphas, (P, T) prefix mask and the (P, 2) targets.
    """
    H, W = image_size
    v, u = np.mgrid[0:H, 0:W]
    targets = np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = targets[:, 0] - ox, targets[:, 1] - oy
    span = np.maximum(np.abs(dx), np.abs(dy))
    n = np.maximum(np.ceil(span * supersample - 1e-9), 1).astype(np.int64)

    def interval(o, d, lo, hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            a, b = (lo - o) / d, (hi - o) / d
        inside = (lo <= o) & (o <= hi)
        a = np.where(d == 0, np.where(inside, -np.inf, np.inf), a)
        b = np.where(d == 0, np.where(inside, np.inf, -np.inf), b)
        return np.minimum(a, b), np.maximum(a, b)

    ax = interval(ox, dx, -0.5, W - 0.5)
    ay = interval(oy, dy, -0.5, H - 0.5)
    lo = np.clip(np.maximum(np.maximum(ax[0], ay[0]), 0.0), 0.0, 1.0)
    k0 = np.maximum(np.floor(lo * n).astype(np.int64) - 1, 0)
    T = int((n - k0).max()) + 1
    k = k0[:, None] + np.arange(T)[None, :]
    alpha = k / n[:, None]
    su = ox + alpha * dx[:, None]
    sv = oy + alpha * dy[:, None]
    ok = (k <= n[:, None]) & (su >= -0.5) & (su < W - 0.5) & (sv >= -0.5) & (sv < H - 0.5)
    # left-align the contiguous in-frame run
    first = np.argmax(ok, axis=1)
    cols = np.minimum(first[:, None] + np.arange(T)[None, :], T - 1)
    rows = np.arange(len(targets))[:, None]
    alpha = alpha[rows, cols]
    ok = ok[rows, cols] & (first[:, None] + np.arange(T)[None, :] < T)
    lengths = ok.sum(axis=1)
    Tm = max(int(lengths.max()), 1)
    degenerate = span < 0.5
    return alpha[:, :Tm], ok[:, :Tm], targets, degenerate


@dataclass
class OracleResult:
    shadow_map: ShadowMap
    num_samples: int


def r3_oracle(height_map, camera: CameraModel, light: LightSource, supersample: int = 1,
              light_index: int = 0, chunk: int = 4096) -> OracleResult:
    """Exact binary shadows: one bilinear walk from the light's projection per pixel."""
    grid = np.asarray(height_map, dtype=np.float64)
    H, W = grid.shape
    if (H, W) != tuple(camera.image_size):
        raise ValueError("height map does not match the camera image size")
    alpha, ok, targets, degenerate = _pixel_walk_samples(light.image_projection, (H, W), supersample)
    ell = np.asarray(light.image_projection, dtype=np.float64)
    lit = np.ones(H * W, dtype=np.float64)
    for a in range(0, H * W, chunk):
        sl = slice(a, a + chunk)
        al, vm = alpha[sl], ok[sl]
        su = ell[0] * (1 - al) + targets[sl, 0:1] * al
        sv = ell[1] * (1 - al) + targets[sl, 1:2] * al
        d = _bilinear(grid, su, sv)
        dirs, center = _world_dirs(camera, su, sv)
        pts = center + d[..., None] * dirs
        batch = ScanBatch(pts, vm, light.position, None)
        last = vm.sum(axis=1) - 1
        r = np.arange(len(last))
        lit[sl] = (batch.angles[r, last] >= batch.running_max[r, last]).astype(np.float64)
    lit[degenerate] = 1.0
    return OracleResult(ShadowMap(lit.reshape(H, W), light_index), int(ok.sum()))


def render_shadow_map_r3_oracle(height_map, camera: CameraModel, light: LightSource,
                                supersample: int = 1, light_index: int = 0) -> ShadowMap:
    return r3_oracle(height_map, camera, light, supersample, light_index).shadow_map
