"""Explicit ReLU constructions: approximate multiplication, gluing onto boxes,
and a piecewise-linear approximant of the logit of the hard distributions.

All builders return unclamped networks (``M = inf``) wrapped in a
``ConstructiveNet`` that carries a sup-norm error bound.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .networks import NetworkSpec, forward

UNCLAMPED = math.inf


class ConstructionError(ValueError):
    pass


@dataclass
class ConstructiveNet:
    net: NetworkSpec
    kind: str  # one of mul, glue, bump_approx, composed
    error_bound: float
    info: dict = field(default_factory=dict)

    def __call__(self, x):
        return forward(self.net, x)

    @property
    def depth(self) -> int:
        return self.net.depth


def nonzero_parameter_count(net: NetworkSpec) -> int:
    """Number of nonzero weights and biases; block structure makes this much smaller than the dense count."""
    return int(sum(np.count_nonzero(W) + np.count_nonzero(b) for W, b in zip(net.weights, net.biases)))


def _network(d: int, layers: list[tuple[np.ndarray, np.ndarray]]) -> NetworkSpec:
    widths = tuple(W.shape[1] for W, _ in layers[:-1])
    return NetworkSpec(d, widths, [W for W, _ in layers], [b for _, b in layers], UNCLAMPED)


def _layers(net: NetworkSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(W.copy(), b.copy()) for W, b in zip(net.weights, net.biases)]


def identity_network(d: int, depth: int) -> NetworkSpec:
    """Returns x exactly through ``depth`` hidden layers of (relu(x), relu(-x)) pairs."""
    if depth < 1:
        raise ConstructionError("depth must be at least 1")
    eye = np.eye(d)
    pair_in = np.hstack([eye, -eye])
    layers = [(pair_in, np.zeros(2 * d))]
    layers += [(np.eye(2 * d), np.zeros(2 * d)) for _ in range(depth - 1)]
    layers.append((np.vstack([eye, -eye]), np.zeros(d)))
    return _network(d, layers)


def extend_depth(net: NetworkSpec, extra: int) -> NetworkSpec:
    """Same function with ``extra`` more hidden layers carrying the output as a +/- pair."""
    if extra == 0:
        return net
    k = net.out_dim
    layers = _layers(net)
    W, b = layers.pop()
    layers.append((np.hstack([W, -W]), np.concatenate([b, -b])))
    layers += [(np.eye(2 * k), np.zeros(2 * k)) for _ in range(extra - 1)]
    eye = np.eye(k)
    layers.append((np.vstack([eye, -eye]), np.zeros(k)))
    return _network(net.d, layers)


def _block_diag(mats: list[np.ndarray]) -> np.ndarray:
    rows = sum(M.shape[0] for M in mats)
    cols = sum(M.shape[1] for M in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for M in mats:
        out[r:r + M.shape[0], c:c + M.shape[1]] = M
        r += M.shape[0]
        c += M.shape[1]
    return out


def parallel(nets: list[NetworkSpec]) -> NetworkSpec:
    """Shared input, stacked outputs; shallower nets are padded to the deepest one."""
    d = nets[0].d
    if any(n.d != d for n in nets):
        raise ConstructionError("parallel networks must share the input dimension")
    depth = max(n.depth for n in nets)
    nets = [extend_depth(n, depth - n.depth) for n in nets]
    layers = [(np.hstack([n.weights[0] for n in nets]), np.concatenate([n.biases[0] for n in nets]))]
    for l in range(1, depth + 1):
        layers.append((_block_diag([n.weights[l] for n in nets]), np.concatenate([n.biases[l] for n in nets])))
    return _network(d, layers)


def compose(outer: NetworkSpec, inner: NetworkSpec) -> NetworkSpec:
    """outer(inner(x)); the inner output map is folded into the outer first layer."""
    if inner.out_dim != outer.d:
        raise ConstructionError(f"inner output {inner.out_dim} does not match outer input {outer.d}")
    head = _layers(inner)
    tail = _layers(outer)
    W_in, b_in = head.pop()
    W_out, b_out = tail.pop(0)
    merged = (W_in @ W_out, b_in @ W_out + b_out)
    return _network(inner.d, head + [merged] + tail)


def sum_outputs(net: NetworkSpec, coeffs=None) -> NetworkSpec:
    """Scalar network returning a weighted sum of the outputs of ``net``."""
    c = np.ones(net.out_dim) if coeffs is None else np.asarray(coeffs, dtype=float)
    layers = _layers(net)
    W, b = layers.pop()
    layers.append(((W @ c)[:, None], np.array([b @ c])))
    return _network(net.d, layers)


# --- multiplication -------------------------------------------------------

def _pl_square_sup_error(knots: np.ndarray, coef: float, upper: float) -> float:
    """Exact sup over [0, upper] of |t^2 - coef * sum_j relu(t - knots_j)|.

    On each piece between sorted knots the difference is a concave quadratic,
    so its extremes sit at the piece ends or at the vertex.
    """
    b = np.sort(knots[knots < upper])
    ends = np.concatenate([[0.0], b, [upper]])
    worst = 0.0
    for k in range(len(ends) - 1):
        lo, hi = ends[k], ends[k + 1]
        slope = coef * k
        offset = -coef * b[:k].sum()
        cand = [lo, hi]
        vertex = slope / 2.0
        if lo < vertex < hi:
            cand.append(vertex)
        for t in cand:
            worst = max(worst, abs(offset + slope * t - t * t))
    return worst


BRIDGE_RESOLUTION = 2**16


def maurey_knots(K: int, upper: float, seed: int = 0) -> np.ndarray:
    """K knots in [0, upper] whose empirical CDF is uniform plus a bridge path / sqrt(K).

    An i.i.d. uniform sample of size K has empirical CDF F + B_K / sqrt(K) with
    B_K close to a Brownian bridge. Here a single bridge path, fixed by
    ``seed``, is shared by every K (common random numbers), so networks of
    different widths see the same fluctuation shape and their errors scale
    cleanly like K^-1/2. Knots are the (j + 1/2)/K quantiles of the monotone
    rearrangement of u + B(u)/sqrt(K).
    """
    n = BRIDGE_RESOLUTION
    rng = np.random.default_rng(seed)
    walk = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n))]) / math.sqrt(n)
    u = np.linspace(0.0, 1.0, n + 1)
    bridge = walk - u * walk[-1]
    cdf = np.sort(np.clip(u + bridge / math.sqrt(K), 0.0, 1.0))
    levels = (np.arange(K) + 0.5) / K
    return upper * np.searchsorted(cdf, levels) / n


def build_mul_network(M_bound: float, p: int, seed: int = 0) -> ConstructiveNet:
    """Approximate product on [-M_bound, M_bound]^2 in F(9, (2, ..., 1)).

    Uses xy = (|x+y|^2 - |x-y|^2) / 4. Each square t^2 = 2R E relu(t - b) with
    b ~ U[0, R], R = 2 M_bound, is replaced by an equal-weight average over
    ``p // 2`` Monte Carlo knots (see ``maurey_knots``), which gives sup error
    of order p^-1/2. Units of the two squares are interleaved so that equal
    arguments produce bitwise equal sums, making Mul(x, 0) = Mul(0, y) = 0 exact.
    The recorded bound is exact for the realised knots.
    """
    if p < 1:
        raise ConstructionError("p must be positive")
    R = 2.0 * M_bound
    K = max(1, p // 2)
    knots = maurey_knots(K, R, seed)
    coef = 2.0 * R / K

    first = np.array([[1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]])
    absval = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    layers = [(first, np.zeros(4)), (absval, np.zeros(2))]
    layers += [(np.eye(2), np.zeros(2)) for _ in range(5)]
    spread = np.zeros((2, 2 * K))
    spread[0, 0::2] = 1.0
    spread[1, 1::2] = 1.0
    layers.append((spread, -np.repeat(knots, 2)))
    gather = np.zeros((2 * K, 2))
    gather[0::2, 0] = coef
    gather[1::2, 1] = coef
    layers.append((gather, np.zeros(2)))
    layers.append((np.array([[0.25], [-0.25]]), np.zeros(1)))
    net = _network(2, layers)

    bound = 0.5 * _pl_square_sup_error(knots, coef, R)
    return ConstructiveNet(net, "mul", bound, {"M_bound": M_bound, "p": p, "knots": K, "seed": seed})


# --- gluing ---------------------------------------------------------------

def build_glue_network(box_lo, box_hi, epsilon: float, C1: float) -> ConstructiveNet:
    """Network on (x, y) equal to y on the epsilon-shrunk box and 0 outside the box.

    With D_i = min(A_i + B_i, 1) where A_i, B_i are the left and right ramps of
    width epsilon, the output is relu(y - 2 C1 sum D_i) - relu(-y - 2 C1 sum D_i).
    Inside the shrunk box every ramp is exactly 0, so y passes unchanged. Outside
    the box some D_i is 1 (up to rounding), and 2 C1 dominates any |y| < C1.
    In between the output lies between 0 and y.
    """
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    d = lo.size
    if hi.shape != lo.shape or np.any(hi <= lo):
        raise ConstructionError("box must have positive width in every coordinate")
    if not 0 < epsilon <= 0.5 * float(np.min(hi - lo)):
        raise ConstructionError(f"epsilon={epsilon} exceeds half the smallest box edge")
    if not C1 > 0:
        raise ConstructionError("C1 must be positive")

    # layer 1: A_1, B_1, ..., A_d, B_d, relu(y), relu(-y)
    W1 = np.zeros((d + 1, 2 * d + 2))
    b1 = np.zeros(2 * d + 2)
    for i in range(d):
        W1[i, 2 * i] = -1.0 / epsilon
        b1[2 * i] = 1.0 + lo[i] / epsilon
        W1[i, 2 * i + 1] = 1.0 / epsilon
        b1[2 * i + 1] = 1.0 - hi[i] / epsilon
    W1[d, 2 * d] = 1.0
    W1[d, 2 * d + 1] = -1.0
    # layer 2: S_i = relu(A_i + B_i), T_i = relu(A_i + B_i - 1); D_i = S_i - T_i
    W2 = np.zeros((2 * d + 2, 2 * d + 2))
    b2 = np.zeros(2 * d + 2)
    for i in range(d):
        W2[2 * i:2 * i + 2, 2 * i] = 1.0
        W2[2 * i:2 * i + 2, 2 * i + 1] = 1.0
        b2[2 * i + 1] = -1.0
    W2[2 * d, 2 * d] = 1.0
    W2[2 * d + 1, 2 * d + 1] = 1.0
    # layer 3: positive and negative parts gated by the box
    W3 = np.zeros((2 * d + 2, 2))
    W3[0:2 * d:2, :] = -2.0 * C1
    W3[1:2 * d:2, :] = 2.0 * C1
    W3[2 * d, 0] = 1.0
    W3[2 * d + 1, 1] = 1.0
    layers = [(W1, b1), (W2, b2), (W3, np.zeros(2)), (np.array([[1.0], [-1.0]]), np.zeros(1))]
    net = _network(d + 1, layers)
    return ConstructiveNet(net, "glue", 0.0, {"box_lo": lo, "box_hi": hi, "epsilon": epsilon, "C1": C1})


def shrunk_box(box, epsilon):
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    return lo + epsilon, hi - epsilon


def _boxes_overlap(a, b) -> bool:
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


def compose_local_approximants(locals_, epsilon: float, C1: float, excluded_mass=None) -> ConstructiveNet:
    """Sum of glued local approximants, one per box.

    On a shrunk box exactly one summand is active (the others see a point
    outside their closed box), so the sup error there is the largest local
    bound, provided every local output stays below C1 in magnitude.
    ``excluded_mass`` maps the list of (box, shrunk box) pairs to the
    probability of the transition bands; without it the Lebesgue volume of
    the bands is recorded instead.
    """
    if not locals_:
        raise ConstructionError("need at least one local approximant")
    d = locals_[0][0].net.d
    shrunk = [shrunk_box(box, epsilon) for _, box in locals_]
    for (i, a), (j, b) in itertools.combinations(enumerate(shrunk), 2):
        if _boxes_overlap(a, b):
            warnings.warn(f"shrunk boxes {i} and {j} overlap; their outputs add up there", RuntimeWarning)

    glued = []
    for local, box in locals_:
        if local.net.d != d or local.net.out_dim != 1:
            raise ConstructionError("local approximants must map R^d to R")
        glue = build_glue_network(box[0], box[1], epsilon, C1).net
        both = parallel([identity_network(d, local.net.depth), local.net])
        glued.append(compose(glue, both))
    net = sum_outputs(parallel(glued))

    pairs = [(tuple(np.asarray(v, dtype=float) for v in box), s) for (_, box), s in zip(locals_, shrunk)]
    band_volume = sum(float(np.prod(b[1] - b[0]) - np.prod(np.clip(s[1] - s[0], 0, None))) for b, s in pairs)
    delta = excluded_mass(pairs) if excluded_mass is not None else band_volume
    bound = max(local.error_bound for local, _ in locals_)
    info = {"epsilon": epsilon, "C1": C1, "shrunk_boxes": shrunk, "excluded": delta, "band_volume": band_volume}
    return ConstructiveNet(net, "composed", bound, info)


# --- logit of the hard distributions ------------------------------------

def _logit_profile(amplitude: float):
    """G(s) = log((1 + a h(sqrt s)) / (1 - a h(sqrt s))), the logit as a function of ||q(x - g)||^2."""
    def G(s):
        hv = dist.bump_h(np.sqrt(np.maximum(s, 0.0)))
        return np.log1p(amplitude * hv) - np.log1p(-amplitude * hv)
    return G


def _local_logit_net(center: np.ndarray, q: int, sq_knots: np.ndarray, s_knots: np.ndarray,
                     s_values: np.ndarray) -> NetworkSpec:
    d = center.size
    K = sq_knots.size
    step = sq_knots[1] - sq_knots[0]
    # z_j = q (x_j - g_j) as a +/- pair
    eye = np.eye(d)
    W1 = np.hstack([q * eye, -q * eye])
    b1 = np.concatenate([-q * center, q * center])
    # relu(|z_j| - t_k) for every coordinate and knot
    W2 = np.zeros((2 * d, d * K))
    for j in range(d):
        W2[j, j * K:(j + 1) * K] = 1.0
        W2[d + j, j * K:(j + 1) * K] = 1.0
    b2 = -np.tile(sq_knots, d)
    # s = sum_j pl_square(|z_j|) >= 0, kept as a single unit
    sq_coef = np.full(K, 2.0 * step)
    sq_coef[0] = step
    W3 = np.tile(sq_coef, d)[:, None]
    b3 = np.zeros(1)
    # piecewise-linear profile in s with a flat tail after the last knot
    slopes = np.diff(s_values) / np.diff(s_knots)
    incr = np.diff(np.concatenate([[0.0], slopes, [0.0]]))
    W4 = np.ones((1, s_knots.size))
    b4 = -s_knots
    W5 = incr[:, None]
    b5 = np.array([s_values[0]])
    return _network(d, [(W1, b1), (W2, b2), (W3, b3), (W4, b4), (W5, b5)])


def build_logit_approximant(params: dist.AssouadParams, p: int, epsilon: float | None = None,
                            fine: int = 64) -> ConstructiveNet:
    """Network approximating log(eta / (1 - eta)) on the shrunk active cells.

    Each cell with sigma_i = 1 gets a local net built from p knots for the
    coordinate squares on [0, 1/2] and p knots for the profile on [0, 1/4];
    cells with sigma_i = 0 and the residual region have logit 0 and need no
    summand. The recorded bound is the profile interpolation error plus the
    profile's Lipschitz constant times the square error d * step^2 / 4.
    The default epsilon = 1/(8q) keeps every sampling ball inside its shrunk
    cell, so the excluded probability is exactly 0.
    """
    if p < 2:
        raise ConstructionError("need at least 2 knots")
    q, d, a = params.q, params.d, params.amplitude
    epsilon = 1.0 / (8 * q) if epsilon is None else epsilon
    G = _logit_profile(a)

    sq_knots = np.linspace(0.0, 0.5, p + 1)[:-1]
    sq_step = 0.5 / p
    s_knots = np.linspace(0.0, 0.25, p)
    s_values = G(s_knots)

    # Lipschitz constant of G from the exact slopes of the tabulated bump:
    # |G'(s)| = 2a h'(t) / ((1 - a^2 h^2) 2t) with t = sqrt(s) >= 1/4 where h' != 0
    prof = dist.default_profile()
    h_slope = float(np.max(np.abs(np.diff(prof._values) / np.diff(prof._knots))))
    lip = 2.0 * a / (1.0 - a * a) * h_slope / (2.0 * 0.25)
    grid = np.linspace(0.0, 0.25, fine * (p - 1) + 1)
    interp_err = float(np.max(np.abs(G(grid) - np.interp(grid, s_knots, s_values))))
    interp_err += 2.0 * lip * (grid[1] - grid[0])
    bound = interp_err + lip * d * sq_step**2 / 4.0

    C1 = 2.0 * float(np.max(np.abs(s_values))) + 1.0
    centers = params.centers
    locals_ = []
    for i in range(params.m):
        if params.sigma[i] != 1:
            continue
        local = _local_logit_net(centers[i], q, sq_knots, s_knots, s_values)
        cell = (centers[i] - 0.5 / q, centers[i] + 0.5 / q)
        locals_.append((ConstructiveNet(local, "bump_approx", bound), cell))
    if not locals_:
        raise ConstructionError("all-zero sigma: the logit is identically 0")

    radius = params.ball_radius

    def ball_mass_outside(pairs):
        # a sampling ball lies inside its shrunk cell iff 1/(2q) - epsilon >= 1/(4q)
        return 0.0 if 0.5 / q - epsilon >= radius else float("nan")

    out = compose_local_approximants(locals_, epsilon, C1, excluded_mass=ball_mass_outside)
    out.kind = "bump_approx"
    out.info.update({"p": p, "lipschitz": lip, "interp_error": interp_err})
    return out
