"""Implicit depth map: a sine-activated MLP over positionally encoded pixels.

Forward and backward passes are written out by hand in float64 numpy. All
parameters live in one flat vector so the optimizer can treat the field as a
single array; per-layer weights and biases are views into it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SDF1"


@dataclass(frozen=True)
class EncodingSpec:
    num_octaves: int = 6
    base_frequency: float = np.pi

    @property
    def out_dim(self) -> int:
        return 2 + 4 * self.num_octaves


def normalize_pixels(points, image_size) -> np.ndarray:
    """Map pixel centers ``0 .. W-1`` / ``0 .. H-1`` onto ``[-1, 1]``."""
    H, W = image_size
    points = np.asarray(points, dtype=np.float64)
    scale = np.array([2.0 / max(W - 1, 1), 2.0 / max(H - 1, 1)])
    return points * scale - 1.0


def encode(p, spec: EncodingSpec) -> np.ndarray:
    """``[p, sin(f_k p), cos(f_k p)]`` with ``f_k = base * 2**k`` for ``k < num_octaves``.

    ``p`` holds normalized coordinates, shape (N, 2); output (N, 2 + 4F).
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    feats = [p]
    for k in range(spec.num_octaves):
        f = spec.base_frequency * 2.0**k
        feats.append(np.sin(f * p))
        feats.append(np.cos(f * p))
    return np.concatenate(feats, axis=1)


def _encode_backward(p, g, spec: EncodingSpec) -> np.ndarray:
    out = g[:, :2].copy()
    col = 2
    for k in range(spec.num_octaves):
        f = spec.base_frequency * 2.0**k
        out += g[:, col : col + 2] * f * np.cos(f * p)
        out -= g[:, col + 2 : col + 4] * f * np.sin(f * p)
        col += 4
    return out


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    """``x`` with ``softplus(x) == y`` for ``y > 0``."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class DepthField:
    """``d = offset + softplus(softplus^-1(center - offset) + scale * raw)``.

    ``raw = MLP(encode(normalize(u, v)))``. The transform maps ``raw = 0`` to
    ``center`` exactly, behaves like ``center + scale * raw`` nearby when
    ``center - offset`` is a few units, and never drops below ``offset``.

    ``layer_sizes`` lists the widths including input and output, so
    ``[26, 128, 128, 128, 128, 128, 1]`` is six affine maps. Every map but the
    last is followed by ``sin(omega * .)``; the first uses ``omega_first``.
    """

    def __init__(
        self,
        params: np.ndarray,
        layer_sizes,
        image_size,
        encoding: EncodingSpec = EncodingSpec(),
        omega_first: float = 30.0,
        omega_hidden: float = 30.0,
        depth_offset: float = 0.1,
        depth_scale: float = 1.0,
        depth_center: float = 1.0,
    ):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.image_size = tuple(int(s) for s in image_size)
        self.encoding = encoding
        self.omega_first = float(omega_first)
        self.omega_hidden = float(omega_hidden)
        self.depth_offset = float(depth_offset)
        self.depth_scale = float(depth_scale)
        self.depth_center = float(depth_center)
        if self.layer_sizes[0] != encoding.out_dim or self.layer_sizes[-1] != 1:
            raise ValueError("layer sizes inconsistent with encoding / scalar output")
        if self.depth_offset <= 0 or self.depth_scale <= 0 or self.depth_center <= self.depth_offset:
            raise ValueError("depth transform needs 0 < offset < center and scale > 0")
        n = sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        self.params = np.array(params, dtype=np.float64).reshape(-1)
        if self.params.size != n:
            raise ValueError(f"expected {n} parameters, got {self.params.size}")
        self._bind_views()
        self._base = float(inverse_softplus(self.depth_center - self.depth_offset))

    def _bind_views(self):
        self.weights, self.biases = [], []
        i = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[i : i + a * b].reshape(a, b))
            i += a * b
            self.biases.append(self.params[i : i + b])
            i += b

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def omega(self, layer: int) -> float:
        return self.omega_first if layer == 0 else self.omega_hidden

    def copy(self) -> "DepthField":
        return self.with_params(self.params.copy())

    def with_params(self, params) -> "DepthField":
        return DepthField(
            params, self.layer_sizes, self.image_size, self.encoding,
            self.omega_first, self.omega_hidden, self.depth_offset, self.depth_scale,
            self.depth_center,
        )

    def _shifted(self, raw):
        return self._base + self.depth_scale * raw

    def transform(self, raw):
        return self.depth_offset + softplus(self._shifted(raw))

    def _forward(self, points, keep: bool):
        p = normalize_pixels(np.atleast_2d(points), self.image_size)
        x = encode(p, self.encoding)
        acts = [x]
        pre = []
        for l in range(self.num_layers - 1):
            z = x @ self.weights[l] + self.biases[l]
            x = np.sin(self.omega(l) * z)
            if keep:
                pre.append(z)
                acts.append(x)
        raw = (x @ self.weights[-1] + self.biases[-1])[:, 0]
        return self.transform(raw), (p, acts, pre, raw)

    def __call__(self, points) -> np.ndarray:
        """Depths for an (N, 2) array of pixel coordinates (u, v)."""
        return self._forward(points, keep=False)[0]

    def eval(self, u) -> float:
        return float(self(np.asarray(u, dtype=np.float64)[None, :])[0])

    def eval_batch_with_grads(self, points):
        depths, cache = self._forward(points, keep=True)
        return depths, Tape(self, cache)

    def depth_grid(self) -> np.ndarray:
        return self.eval_grid()[0]

    def eval_grid(self, with_tape: bool = False):
        """Depth on the full pixel lattice as an (H, W) array (and its tape)."""
        H, W = self.image_size
        v, u = np.mgrid[0:H, 0:W]
        pts = np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)
        if with_tape:
            d, tape = self.eval_batch_with_grads(pts)
            return d.reshape(H, W), tape
        return self(pts).reshape(H, W), None

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<I", len(self.layer_sizes))
        head += struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes)
        head += struct.pack("<III", self.encoding.num_octaves, *self.image_size)
        head += struct.pack(
            "<6d", self.encoding.base_frequency, self.omega_first, self.omega_hidden,
            self.depth_offset, self.depth_scale, self.depth_center,
        )
        return head + self.params.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DepthField":
        if blob[:4] != MAGIC:
            raise ValueError("not a depth-field checkpoint")
        off = 4
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        sizes = struct.unpack_from(f"<{n}I", blob, off)
        off += 4 * n
        octaves, H, W = struct.unpack_from("<III", blob, off)
        off += 12
        base, w0, wh, offset, scale, center = struct.unpack_from("<6d", blob, off)
        off += 48
        params = np.frombuffer(blob[off:], dtype="<f4").astype(np.float64)
        return cls(params, sizes, (H, W), EncodingSpec(octaves, base), w0, wh, offset, scale, center)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DepthField":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


class Tape:
    """Cached activations of one batched forward pass."""

    def __init__(self, field: DepthField, cache):
        self.field = field
        self.p, self.acts, self.pre, self.raw = cache

    def backward(self, grad_depths, input_grad: bool = False):
        """Pull ``dL/d depth`` (N,) back to ``dL/d params`` (flat).

        With ``input_grad`` also returns ``dL/d(u, v)`` in pixel units, shape (N, 2).
        """
        f = self.field
        g = np.asarray(grad_depths, dtype=np.float64).reshape(-1, 1)
        g = g * (f.depth_scale * _sigmoid(f._shifted(self.raw)))[:, None]
        grads_w = [None] * f.num_layers
        grads_b = [None] * f.num_layers
        for l in range(f.num_layers - 1, -1, -1):
            grads_w[l] = self.acts[l].T @ g
            grads_b[l] = g.sum(axis=0)
            if l == 0 and not input_grad:
                break
            g = g @ f.weights[l].T
            if l > 0:
                w = f.omega(l - 1)
                g = g * (w * np.cos(w * self.pre[l - 1]))
        flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)])
        if not input_grad:
            return flat
        H, W = f.image_size
        g_p = _encode_backward(self.p, g, f.encoding)
        g_u = g_p * np.array([2.0 / max(W - 1, 1), 2.0 / max(H - 1, 1)])
        return flat, g_u


def init(
    seed: int,
    image_size,
    hidden: int = 128,
    num_layers: int = 6,
    encoding: EncodingSpec = EncodingSpec(),
    omega_first: float = 30.0,
    omega_hidden: float = 30.0,
    depth_offset: float = 0.1,
    depth_scale: float = 1.0,
    depth_center: float = 1.0,
) -> DepthField:
    """Sine-network initialization.

    First layer weights ~ U(-1/n, 1/n); later layers ~ U(-sqrt(6/n)/omega_hidden,
    sqrt(6/n)/omega_hidden); biases ~ U(-1/sqrt(n), 1/sqrt(n)), with n the fan-in.
    """
    rng = np.random.default_rng(seed)
    sizes = [encoding.out_dim] + [hidden] * (num_layers - 1) + [1]
    chunks = []
    for l, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / a if l == 0 else np.sqrt(6.0 / a) / omega_hidden
        chunks.append(rng.uniform(-bound, bound, size=a * b))
        chunks.append(rng.uniform(-1.0 / np.sqrt(a), 1.0 / np.sqrt(a), size=b))
    return DepthField(
        np.concatenate(chunks), sizes, image_size, encoding,
        omega_first, omega_hidden, depth_offset, depth_scale, depth_center,
    )
