"""Dense feed-forward ReLU networks with a clamped output.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, d)`` propagates as ``relu(X @ W + b)``. The last affine map has no ReLU
and its (scalar) output is clamped to ``[-M/2, M/2]``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .surrogate import LossProfile, logistic, logistic_grad

FORMAT_VERSION = 1
DEFAULT_DEPTH = 11


class ShapeError(ValueError):
    pass


def relu(z):
    return np.maximum(z, 0.0)


@dataclass
class NetworkSpec:
    """A network in F(L, p): ``len(widths)`` hidden layers plus an affine output.

    ``M`` is the full clamp range; outputs land in ``[-M/2, M/2]``. Use
    ``M = inf`` for an unclamped network. ``weights[l]`` maps layer ``l`` to
    layer ``l + 1`` (layer 0 is the input), so there are ``L + 1`` of them.
    """

    d: int
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    M: float = 4.0
    out_dim: int = field(init=False, default=1)

    def __post_init__(self):
        self.widths = tuple(int(p) for p in self.widths)
        if self.d < 1:
            raise ShapeError("input dimension must be positive")
        if not self.widths or min(self.widths) < 1:
            raise ShapeError(f"hidden widths must be positive, got {self.widths}")
        if not self.M > 0:
            raise ValueError("clamp range M must be positive")
        dims = (self.d,) + self.widths
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ShapeError("need one weight matrix and bias per layer plus the output")
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            fan_out = dims[l + 1] if l + 1 < len(dims) else W.shape[1]
            if W.shape != (dims[l], fan_out) or b.shape != (fan_out,):
                raise ShapeError(f"layer {l}: weight {W.shape} / bias {b.shape} do not fit {dims[l]}->{fan_out}")
        self.out_dim = self.weights[-1].shape[1]

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def clamp(self) -> float:
        return self.M / 2.0

    def copy(self) -> "NetworkSpec":
        return NetworkSpec(self.d, self.widths, [W.copy() for W in self.weights],
                           [b.copy() for b in self.biases], self.M)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for W, b in zip(self.weights, self.biases):
            for arr in (W, b):
                arr[...] = np.reshape(theta[pos:pos + arr.size], arr.shape)
                pos += arr.size

    def to_bytes(self) -> bytes:
        header = struct.pack("<BII", FORMAT_VERSION, self.d, self.depth)
        header += struct.pack(f"<{self.depth}I", *self.widths)
        header += struct.pack("<Id", self.out_dim, self.M)
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                        for pair in zip(self.weights, self.biases) for a in pair)
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NetworkSpec":
        version, d, depth = struct.unpack_from("<BII", blob, 0)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {version}")
        pos = struct.calcsize("<BII")
        widths = struct.unpack_from(f"<{depth}I", blob, pos)
        pos += struct.calcsize(f"<{depth}I")
        out_dim, M = struct.unpack_from("<Id", blob, pos)
        pos += struct.calcsize("<Id")
        dims = (d,) + widths + (out_dim,)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = np.frombuffer(blob, "<f8", fan_in * fan_out, pos).reshape(fan_in, fan_out)
            pos += W.nbytes
            b = np.frombuffer(blob, "<f8", fan_out, pos)
            pos += b.nbytes
            weights.append(W.astype(float))
            biases.append(b.astype(float))
        if pos != len(blob):
            raise ValueError("trailing bytes after network payload")
        return cls(d, widths, weights, biases, M)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def architecture_parameter_count(d: int, widths, out_dim: int = 1) -> int:
    dims = (d,) + tuple(widths)
    hidden = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    return hidden + dims[-1] * out_dim + out_dim


def parameter_count(net: NetworkSpec) -> int:
    """sum over hidden layers of p_{l-1} p_l + p_l, plus p_L + 1 for the output."""
    return architecture_parameter_count(net.d, net.widths, net.out_dim)


def _as_batch(net: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ShapeError(f"expected input dimension {net.d}, got shape {np.shape(x)}")
    return X, single


def forward_raw(net: NetworkSpec, x) -> np.ndarray:
    """Output of the final affine map before clamping, shape ``(n, out_dim)``."""
    h, _ = _as_batch(net, x)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = relu(h @ W + b)
    return h @ net.weights[-1] + net.biases[-1]


def forward(net: NetworkSpec, x):
    """Clamped network output; a float for a single input vector, else an array."""
    X, single = _as_batch(net, x)
    out = np.clip(forward_raw(net, X), -net.clamp, net.clamp)
    if net.out_dim == 1:
        out = out[:, 0]
    if not single:
        return out
    return float(out[0]) if net.out_dim == 1 else out[0]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def _batch_arrays(batch):
    if isinstance(batch, tuple):
        X, y = batch
    elif hasattr(batch, "X") and hasattr(batch, "y"):
        X, y = batch.X, batch.y
    else:
        items = list(batch)
        X = np.array([s.x for s in items], dtype=float)
        y = np.array([s.y for s in items])
    return np.asarray(X, dtype=float), np.asarray(y)


def loss_and_gradient(net: NetworkSpec, X: np.ndarray, y: np.ndarray,
                      loss: LossProfile | None = None, weights=None) -> tuple[float, Gradients]:
    """Mean phi((2y-1) clamp(f(x))) and its exact gradient by reverse mode.

    ``weights`` optionally replaces the uniform 1/n average by a probability vector.
    """
    if net.out_dim != 1:
        raise ShapeError("loss is defined for scalar-output networks")
    phi = loss.phi if loss is not None else logistic
    dphi = loss.dphi if loss is not None else logistic_grad
    X, _ = _as_batch(net, X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)

    acts = [X]
    h = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = relu(h @ W + b)
        acts.append(h)
    raw = (h @ net.weights[-1] + net.biases[-1])[:, 0]
    out = np.clip(raw, -net.clamp, net.clamp)
    sign = 2.0 * y - 1.0
    value = float(np.sum(w * phi(sign * out)))

    inside = np.abs(raw) < net.clamp
    delta = (w * dphi(sign * out) * sign * inside)[:, None]
    gW = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, -1, -1):
        gW[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            # subgradient 0 at the kink: act > 0 iff preactivation > 0
            delta = (delta @ net.weights[l].T) * (acts[l] > 0)
    return value, Gradients(gW, gb)


def gradient(net: NetworkSpec, batch, loss: LossProfile | None = None) -> Gradients:
    """Gradient of the mean logistic loss over ``batch`` (a SampleSet, ``(X, y)`` or LabeledSamples)."""
    X, y = _batch_arrays(batch)
    return loss_and_gradient(net, X, y, loss)[1]


def empirical_phi_risk(net: NetworkSpec, X, y, loss: LossProfile | None = None) -> float:
    phi = loss.phi if loss is not None else logistic
    return float(np.mean(phi((2.0 * np.asarray(y) - 1.0) * forward(net, X))))


def glorot_init(d: int, widths, M: float = 4.0, rng: np.random.Generator | None = None) -> NetworkSpec:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +) weights and zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    dims = (d,) + tuple(widths) + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkSpec(d, tuple(widths), weights, biases, M)


@dataclass(frozen=True)
class Architecture:
    """Shape of a network without weights."""

    d: int
    widths: tuple[int, ...]
    M: float = 4.0

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def parameter_count(self) -> int:
        return architecture_parameter_count(self.d, self.widths)

    def init(self, rng: np.random.Generator) -> NetworkSpec:
        return glorot_init(self.d, self.widths, self.M, rng)


def target_parameter_count(n: int, rate_constant: float = 1.0) -> float:
    return rate_constant * n ** (2.0 / 3.0)


def sized_architecture(n: int, rate_constant: float = 1.0, depth: int = DEFAULT_DEPTH,
                       d: int = 2, M: float = 4.0) -> Architecture:
    """Equal-width architecture whose parameter count is closest to rate_constant * n**(2/3).

    The count is increasing in the width, so the best width is one of the two
    integers bracketing the target. Width is at least 1.
    """
    if n < 1 or depth < 3:
        raise ValueError("need n >= 1 and depth >= 3")
    target = target_parameter_count(n, rate_constant)

    def count(p):
        return architecture_parameter_count(d, (p,) * depth)

    lo, hi = 1, 1
    while count(hi) < target:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) < target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda p: (abs(count(p) - target), p))
    return Architecture(d, (best,) * depth, M)
