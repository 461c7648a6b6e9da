"""Per-scene optimization of a DepthField against binary shadow maps."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import depth_field as dfm
from .depth_field import DepthField, EncodingSpec
from .metrics import DimensionMismatch
from .renderer import RayBundle, ShadowMap, SigmoidTemperature, make_ray_bundle, render_depth_grid_r2

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _values(m):
    return m.values if isinstance(m, ShadowMap) else np.asarray(m, dtype=np.float64)


def reconstruction_loss(pred, truth) -> float:
    """Mean absolute shadow difference over the pixels ``pred`` covers."""
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise DimensionMismatch(f"shadow maps differ in size: {p.shape} vs {t.shape}")
    mask = pred.mask if isinstance(pred, ShadowMap) else np.ones(p.shape, bool)
    if not mask.any():
        return 0.0
    return float(np.abs(p - t)[mask].mean())


def _forward_diffs(a):
    dx = np.zeros_like(a)
    dy = np.zeros_like(a)
    dx[:, :-1] = a[:, 1:] - a[:, :-1]
    dy[:-1, :] = a[1:, :] - a[:-1, :]
    return dx, dy


def edge_weights(mean_image):
    ix, iy = _forward_diffs(np.asarray(mean_image, dtype=np.float64))
    return np.exp(-np.abs(ix)), np.exp(-np.abs(iy))


def depth_regularization(depth_grid, mean_image, with_grad: bool = False):
    """Edge-aware total variation: sum of ``|d_x d| exp(-|d_x I|) + |d_y d| exp(-|d_y I|)``.

    Forward differences; the last column/row repeats its neighbour so its
    difference is zero.
    """
    d = np.asarray(depth_grid, dtype=np.float64)
    if d.shape != np.shape(mean_image):
        raise DimensionMismatch("depth grid and mean image differ in size")
    wx, wy = edge_weights(mean_image)
    dx, dy = _forward_diffs(d)
    value = float((np.abs(dx) * wx).sum() + (np.abs(dy) * wy).sum())
    if not with_grad:
        return value
    gx = np.sign(dx) * wx
    gy = np.sign(dy) * wy
    g = np.zeros_like(d)
    g[:, 1:] += gx[:, :-1]
    g[:, :-1] -= gx[:, :-1]
    g[1:, :] += gy[:-1, :]
    g[:-1, :] -= gy[:-1, :]
    return value, g


@dataclass
class LossTerms:
    rec_per_light: list
    depth_reg: float
    lam: float
    total: float

    @property
    def rec_mean(self) -> float:
        return float(np.mean(self.rec_per_light))


# ---------------------------------------------------------------------------
# optimizer state
# ---------------------------------------------------------------------------


# Sharper than the renderer's generic default: at tau >= 0.1 the soft loss is
# lower for exaggerated relief than for the true surface, so early stages at
# high temperature push the fit toward the wrong shape.
FIT_TAU_SCHEDULE = ((0.0, 0.03), (0.25, 0.01), (0.5, 0.003), (0.75, 0.001))


@dataclass(frozen=True)
class FitConfig:
    """Optimization and field hyperparameters; every field is a CLI/script knob."""

    max_epochs: int = 500
    lr: float = 5e-5
    lr_decay: float = 0.9
    lr_decay_every: int = 15
    lam: float = 1e-6
    tau_schedule: tuple = FIT_TAU_SCHEDULE
    stride_schedule: tuple = ((0.0, 4), (0.3, 2), (0.6, 1))
    supersample: int = 1
    seed: int = 0
    rel_tol: float = 1e-4
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # field
    hidden: int = 128
    num_layers: int = 6
    num_octaves: int = 6
    omega_first: float = 10.0
    omega_hidden: float = 30.0
    depth_init: float | None = None
    depth_scale: float = 3.0
    depth_floor: float = 0.05
    workers: int = 1

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def tau_at(self, epoch: int) -> float:
        return SigmoidTemperature(tuple(self.tau_schedule)).at(self._fraction(epoch))

    def stride_at(self, epoch: int) -> int:
        k = self.stride_schedule[0][1]
        for start, s in self.stride_schedule:
            if self._fraction(epoch) >= start:
                k = s
        return int(k)

    def _fraction(self, epoch: int) -> float:
        return epoch / self.max_epochs if self.max_epochs > 0 else 1.0

    def final_stage(self, epoch: int) -> bool:
        f = self._fraction(epoch)
        return f >= self.tau_schedule[-1][0] and f >= self.stride_schedule[-1][0]


class Adam:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, params, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class OptimizerState:
    adam: Adam
    config: FitConfig
    epoch: int = 0
    bundles: dict = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.config.lr_at(self.epoch)


def new_state(field_: DepthField, config: FitConfig) -> OptimizerState:
    return OptimizerState(Adam(field_.params.size, config.beta1, config.beta2, config.adam_eps), config)


# ---------------------------------------------------------------------------
# loss + gradient
# ---------------------------------------------------------------------------


def mean_image(scene) -> np.ndarray:
    """Per-pixel mean of the ground-truth shadow maps (edge guide for the regularizer)."""
    return np.mean([_values(m) for m in scene.shadow_maps], axis=0)


def _bundle(state, scene, j, stride, supersample) -> RayBundle:
    key = (j, stride, supersample)
    if state is None:
        return make_ray_bundle(scene.camera, scene.lights[j], stride, supersample)
    if key not in state.bundles:
        state.bundles[key] = make_ray_bundle(scene.camera, scene.lights[j], stride, supersample)
    return state.bundles[key]


def grid_loss(depth_grid, scene, tau: float, stride: int = 1, lam: float = 1e-6,
              supersample: int = 1, state: OptimizerState | None = None,
              guide=None, workers: int = 1):
    """Total loss and ``dL/d depth`` for an explicit depth grid."""
    N = len(scene.lights)
    if N < 1:
        raise ValueError("scene has no lights")

    def one(j):
        truth = _values(scene.shadow_maps[j])
        b = _bundle(state, scene, j, stride, supersample)
        rm = render_depth_grid_r2(depth_grid, scene.camera, scene.lights[j], tau, bundle=b, light_index=j)
        pred = rm.shadow_map
        mask = pred.mask
        diff = pred.values - truth
        rec = float(np.abs(diff)[mask].mean()) if mask.any() else 0.0
        g_map = np.where(mask, np.sign(diff), 0.0) / (max(int(mask.sum()), 1) * N)
        return rec, rm.depth_grad(g_map)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, range(N)))
    else:
        results = [one(j) for j in range(N)]
    rec = [r for r, _ in results]
    g = np.zeros_like(np.asarray(depth_grid, dtype=np.float64))
    for _, gj in results:  # fixed reduction order
        g += gj
    reg = 0.0
    if lam != 0.0:
        if guide is None:
            guide = mean_image(scene)
        reg, g_reg = depth_regularization(depth_grid, guide, with_grad=True)
        g += lam * g_reg
    total = float(np.mean(rec) + lam * reg)
    return LossTerms(rec, reg, lam, total), g


def loss_and_grad(field_: DepthField, scene, tau: float, stride: int = 1, lam: float = 1e-6,
                  supersample: int = 1, state: OptimizerState | None = None, guide=None,
                  workers: int = 1):
    """Total loss and ``dL/d params`` for a DepthField."""
    grid, tape = field_.eval_grid(with_tape=True)
    terms, g = grid_loss(grid, scene, tau, stride, lam, supersample, state, guide, workers)
    return terms, tape.backward(g.ravel())


def step(field_: DepthField, scene, state: OptimizerState, guide=None):
    """One epoch: render every light, backpropagate, one Adam update."""
    cfg = state.config
    tau, stride, lr = cfg.tau_at(state.epoch), cfg.stride_at(state.epoch), state.lr
    terms, grad = loss_and_grad(field_, scene, tau, stride, cfg.lam, cfg.supersample, state, guide, cfg.workers)
    new = field_.with_params(state.adam.update(field_.params, grad, lr))
    state.epoch += 1
    return new, terms


# ---------------------------------------------------------------------------
# fitting loop
# ---------------------------------------------------------------------------


@dataclass
class TraceRow:
    epoch: int
    total_loss: float
    rec_loss: float
    depth_reg: float
    lr: float
    tau: float
    stride: int

    COLUMNS = ("epoch", "total_loss", "rec_loss", "depth_reg", "lr", "tau", "stride")

    def csv(self) -> str:
        return ",".join(repr(getattr(self, c)) if isinstance(getattr(self, c), float) else str(getattr(self, c))
                        for c in self.COLUMNS)


def init_field(scene, config: FitConfig) -> DepthField:
    H, W = scene.camera.image_size
    depth_init = config.depth_init
    if depth_init is None:
        depth_init = getattr(scene, "depth_init", None) or 1.0
    return dfm.init(
        config.seed, (H, W), hidden=config.hidden, num_layers=config.num_layers,
        encoding=EncodingSpec(config.num_octaves), omega_first=config.omega_first,
        omega_hidden=config.omega_hidden, depth_offset=config.depth_floor * depth_init,
        depth_scale=config.depth_scale, depth_center=depth_init,
    )


def fit(scene, config: FitConfig = FitConfig(), on_epoch=None, field_: DepthField | None = None) -> DepthField:
    """Optimize a fresh (or given) field until ``max_epochs`` or a loss plateau.

    Plateau stopping only applies once the temperature and stride schedules
    have reached their final stage. ``on_epoch`` receives a TraceRow per epoch.
    """
    f = init_field(scene, config) if field_ is None else field_
    state = new_state(f, config)
    guide = mean_image(scene) if config.lam != 0.0 else None
    history = []
    window = 10
    best_ma = np.inf
    best_epoch = 0
    for epoch in range(config.max_epochs):
        tau, stride, lr = config.tau_at(epoch), config.stride_at(epoch), state.lr
        f, terms = step(f, scene, state, guide)
        row = TraceRow(epoch, terms.total, terms.rec_mean, terms.depth_reg, lr, tau, stride)
        if on_epoch is not None:
            on_epoch(row)
        log.debug("epoch %d loss %.5f rec %.5f tau %g k %d", epoch, terms.total, terms.rec_mean, tau, stride)
        history.append(terms.total)
        if not config.final_stage(epoch):
            best_ma, best_epoch = np.inf, epoch
            continue
        ma = float(np.mean(history[-window:]))
        if ma < best_ma * (1 - config.rel_tol):
            best_ma, best_epoch = ma, epoch
        elif epoch - best_epoch >= config.patience:
            log.info("loss plateaued at epoch %d", epoch)
            break
    return f
