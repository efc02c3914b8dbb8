"""Grid-of-bumps distribution family with exact regression function.

Each member ``P_sigma`` puts mass ``w`` uniformly on a small ball around each
of the first ``m`` centres of the regular grid on ``[0, 1]^d`` and the
remaining mass ``1 - m*w`` uniformly on a residual box far from the unit cube.
On ball ``i`` the regression function is ``(1 + sigma_i * q**-r) / 2``; on the
residual box it is ``1/2``.  Because of this, the Bayes risk, the margin CDF
and pairwise Hellinger distances are all available in closed form.
"""

from __future__ import annotations

import configparser
import csv
import functools
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

MAX_GRID_POINTS = 10**7
DEFAULT_REGION = (2.0, 3.0)

# h1 peaks at t = 3/8 with value exp(-64); the shift keeps table values O(1).
_H1_SHIFT = 64.0


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class GridSizeError(ValueError):
    """Requested grid exceeds MAX_GRID_POINTS."""


def _h1_scaled(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.25) & (t < 0.5)
    ti = t[inside]
    out[inside] = np.exp(_H1_SHIFT - 1.0 / ((0.5 - ti) * (ti - 0.25)))
    return out


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-12, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2, depth - 1
        )

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


@dataclass(frozen=True)
class BumpProfile:
    """Tabulated smooth step ``h`` with ``h = 1`` on [0, 1/4] and ``h = 0`` on [1/2, inf).

    ``normalization_constant`` is the integral of ``h1`` over [1/4, 1/2] in the
    original (unshifted) scale.  Between the plateaus ``h`` is read from a
    table of ``resolution + 1`` knots by linear interpolation.
    """

    resolution: int = 2**14
    normalization_constant: float = field(init=False)
    _knots: np.ndarray = field(init=False, repr=False)
    _values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        # local error estimates run optimistic for this integrand; 1e-14 gives ~1e-15 relative accuracy
        z_scaled = adaptive_simpson(lambda t: float(_h1_scaled(t)), 0.25, 0.5, tol=1e-14)
        knots = np.linspace(0.25, 0.5, self.resolution + 1)
        # 5-point Gauss-Legendre per cell, then tail sums from the right.
        nodes, weights = np.polynomial.legendre.leggauss(5)
        lo, hi = knots[:-1], knots[1:]
        half = 0.5 * (hi - lo)
        pts = 0.5 * (hi + lo)[:, None] + half[:, None] * nodes[None, :]
        cells = half * (_h1_scaled(pts) @ weights)
        tails = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
        if not math.isclose(tails[0], z_scaled, rel_tol=1e-10):
            raise RuntimeError(f"bump table total {tails[0]!r} disagrees with quadrature {z_scaled!r}")
        # Normalise by the table's own total so the plateau at 1/4 is continuous exactly.
        values = np.clip(tails / tails[0], 0.0, 1.0)
        object.__setattr__(self, "normalization_constant", z_scaled * math.exp(-_H1_SHIFT))
        object.__setattr__(self, "_knots", knots)
        object.__setattr__(self, "_values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise DomainError("bump_h is defined on [0, inf)")
        out = np.interp(t, self._knots, self._values)
        out = np.where(t <= 0.25, 1.0, out)
        out = np.where(t >= 0.5, 0.0, out)
        return out if out.ndim else float(out)


@functools.lru_cache(maxsize=None)
def default_profile() -> BumpProfile:
    return BumpProfile()


def bump_h(t):
    """Smooth nonincreasing step: 1 on [0, 1/4], 0 on [1/2, inf)."""
    return default_profile()(t)


def phi_bump(x, r: float, q: int):
    """Radial bump ``q**-r * h(||x||_2)``; ``x`` has shape (..., d)."""
    x = np.asarray(x, dtype=float)
    return q ** (-r) * bump_h(np.linalg.norm(x, axis=-1))


def grid_points(q: int, d: int) -> np.ndarray:
    """Cell centres ((2k_1+1)/(2q), ..., (2k_d+1)/(2q)) in dictionary order."""
    if q < 1 or d < 1:
        raise ValueError("q and d must be positive")
    if q**d > MAX_GRID_POINTS:
        raise GridSizeError(f"q**d = {q**d} exceeds the cap of {MAX_GRID_POINTS}")
    axis = (2 * np.arange(q) + 1) / (2 * q)
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(q**d, d)


def margin_admissible(m: int, w: float, q: int, r: float, alpha: float) -> bool:
    """True iff ``m*w <= (q**-r / 2)**alpha`` (the margin condition with C0 = 1)."""
    bound = (q ** (-r) / 2.0) ** alpha
    return m * w <= bound * (1 + 1e-12)


@dataclass(frozen=True)
class AssouadParams:
    d: int
    q: int
    m: int
    w: float
    r: float
    alpha: float
    sigma: tuple[int, ...]
    region_lo: float = DEFAULT_REGION[0]
    region_hi: float = DEFAULT_REGION[1]

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        if self.d < 1 or self.q < 1:
            raise ValueError("d and q must be positive integers")
        if not 1 <= self.m <= self.q**self.d:
            raise ValueError(f"need 1 <= m <= q**d, got m={self.m}")
        # w = 1/m is allowed: the residual region then carries no mass
        if not 0 < self.w * self.m <= 1.0 + 1e-12:
            raise ValueError(f"need 0 < w <= 1/m, got w={self.w}")
        if self.r <= 0 or self.alpha < 0:
            raise ValueError("need r > 0 and alpha >= 0")
        if len(self.sigma) != self.m or any(s not in (0, 1) for s in self.sigma):
            raise ValueError("sigma must be a 0/1 vector of length m")
        if not margin_admissible(self.m, self.w, self.q, self.r, self.alpha):
            raise ValueError(
                f"margin condition violated: m*w = {self.m * self.w} > (q^-r/2)^alpha"
            )
        if not self.region_hi > self.region_lo:
            raise ValueError("residual region must have positive volume")
        if not (self.region_lo > 1.0 or self.region_hi < 0.0):
            raise ValueError("residual region must be disjoint from the unit cube")

    @property
    def amplitude(self) -> float:
        """Bump height ``q**-r``."""
        return self.q ** (-self.r)

    @property
    def ball_radius(self) -> float:
        return 1.0 / (4 * self.q)

    @property
    def centers(self) -> np.ndarray:
        return grid_points(self.q, self.d)[: self.m]

    def with_sigma(self, sigma: Sequence[int]) -> "AssouadParams":
        return AssouadParams(
            self.d, self.q, self.m, self.w, self.r, self.alpha, tuple(sigma), self.region_lo, self.region_hi
        )


def canonical_params(d: int, q: int, alpha: float, sigma: Sequence[int] | str = "all_ones", seed: int = 0):
    """Lower-bound construction with m = q**d, r = 2d/(2+alpha), w = q**(-alpha*r-d) / 2**alpha."""
    m = q**d
    r = 2.0 * d / (2.0 + alpha)
    w = q ** (-alpha * r - d) / 2.0**alpha
    if isinstance(sigma, str):
        if sigma == "all_ones":
            sigma = (1,) * m
        elif sigma == "random":
            sigma = tuple(np.random.default_rng(seed).integers(0, 2, size=m).tolist())
        else:
            raise ValueError(f"unknown sigma policy {sigma!r}")
    return AssouadParams(d=d, q=q, m=m, w=w, r=r, alpha=alpha, sigma=tuple(sigma))


def canonical_q(n: int, alpha: float, d: int, c_bar: float = 2.0) -> int:
    """Grid resolution floor(c_bar * n**(1/(3 r (2+alpha)))) with r = 2d/(2+alpha)."""
    r = 2.0 * d / (2.0 + alpha)
    return max(1, math.floor(c_bar * n ** (1.0 / (3.0 * r * (2.0 + alpha)))))


def cell_index(params: AssouadParams, x) -> np.ndarray:
    """Dictionary-order index of the grid cell containing x; -1 outside [0, 1]^d."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q = params.q
    inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
    k = np.clip(np.floor(x * q).astype(np.int64), 0, q - 1)
    weights = q ** np.arange(params.d - 1, -1, -1, dtype=np.int64)
    return np.where(inside, k @ weights, -1)


def in_region(params: AssouadParams, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.all((x >= params.region_lo) & (x <= params.region_hi), axis=1)


def eta_sigma(params: AssouadParams, x):
    """Regression function P(Y=1 | X=x); accepts one point or an (n, d) array."""
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    x2 = np.atleast_2d(x_arr)
    if x2.shape[1] != params.d:
        raise ValueError(f"expected points of dimension {params.d}")
    out = np.zeros(len(x2))
    idx = cell_index(params, x2)
    active = (idx >= 0) & (idx < params.m)
    if np.any(active):
        q = params.q
        k = np.clip(np.floor(x2[active] * q), 0, q - 1)
        g = (2 * k + 1) / (2 * q)
        sig = np.asarray(params.sigma)[idx[active]]
        out[active] = 0.5 * (1.0 + sig * phi_bump(q * (x2[active] - g), params.r, q))
    out[in_region(params, x2)] = 0.5
    return float(out[0]) if single else out


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: int
    eta_at_x: float


@dataclass(frozen=True)
class SampleSet:
    """Column-wise storage of labelled draws; iterating yields LabeledSample."""

    X: np.ndarray
    y: np.ndarray
    eta: np.ndarray

    def __len__(self):
        return len(self.y)

    def __iter__(self) -> Iterator[LabeledSample]:
        for xi, yi, ei in zip(self.X, self.y, self.eta):
            yield LabeledSample(xi, int(yi), float(ei))

    def to_csv(self, path=None) -> str:
        """CSV with columns x_1..x_d, y, eta; written to ``path`` when given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.X.shape[1]
        writer.writerow([f"x_{j + 1}" for j in range(d)] + ["y", "eta"])
        for xi, yi, ei in zip(self.X, self.y, self.eta):
            writer.writerow([repr(float(v)) for v in xi] + [int(yi), repr(float(ei))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "SampleSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) - 2
        arr = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(-1, d + 2)
        return cls(arr[:, :d], arr[:, d].astype(np.int64), arr[:, d + 1])


def uniform_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n points uniform in the closed unit ball of R^d."""
    if n == 0:
        return np.empty((0, d))
    if d <= 10:
        accept_rate = math.pi ** (d / 2) / math.gamma(d / 2 + 1) / 2.0**d
        chunks, have = [], 0
        while have < n:
            batch = int((n - have) / accept_rate * 1.2) + 16
            u = rng.uniform(-1.0, 1.0, size=(batch, d))
            u = u[np.einsum("ij,ij->i", u, u) <= 1.0]
            chunks.append(u)
            have += len(u)
        return np.concatenate(chunks)[:n]
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.random(n)[:, None] ** (1.0 / d)


def sample_x(params: AssouadParams, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points from P_X; also returns the component (ball index, or m for the region)."""
    probs = np.append(np.full(params.m, params.w), 1.0 - params.m * params.w)
    probs = np.clip(probs, 0.0, None)
    comp = rng.choice(params.m + 1, size=n, p=probs / probs.sum())
    X = np.empty((n, params.d))
    in_ball = comp < params.m
    X[in_ball] = params.centers[comp[in_ball]] + params.ball_radius * uniform_ball(rng, int(in_ball.sum()), params.d)
    n_region = int((~in_ball).sum())
    X[~in_ball] = rng.uniform(params.region_lo, params.region_hi, size=(n_region, params.d))
    return X, comp


def sample(params: AssouadParams, n: int, seed: int) -> SampleSet:
    """n i.i.d. labelled draws from P_sigma, deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X, _ = sample_x(params, n, rng)
    eta = eta_sigma(params, X)
    y = (rng.random(n) < eta).astype(np.int64)
    return SampleSet(X, y, eta)


def bayes_risk(params: AssouadParams) -> float:
    """E min(eta, 1 - eta): each active bump lowers 1/2 by w * q**-r / 2."""
    return 0.5 - 0.5 * params.w * params.amplitude * sum(params.sigma)


def margin_cdf(params: AssouadParams, t):
    """Exact P_X(0 < |eta - 1/2| <= t), a single step at q**-r / 2.

    Only balls with sigma_i = 1 have a nonzero margin, so the step height is
    ``w * #{sigma_i = 1}``, which equals ``m*w`` for the all-ones vector.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("t must be nonnegative")
    out = params.w * sum(params.sigma) * (t_arr >= params.amplitude / 2.0)
    return float(out) if out.ndim == 0 else out


def empirical_margin_cdf(eta_values, t) -> np.ndarray:
    """Fraction of samples with 0 < |eta - 1/2| <= t for each t."""
    gap = np.abs(np.asarray(eta_values, dtype=float) - 0.5)
    gap = np.sort(gap[gap > 0])
    return np.searchsorted(gap, np.asarray(t, dtype=float), side="right") / len(eta_values)


def hellinger_sq(params: AssouadParams, i: int) -> float:
    """Squared Hellinger distance ``2w(1 - sqrt(1 - q**(-2r)))`` for a flip at index i.

    This is the value for bumps of opposite sign, ``(1 + phi)/2`` against
    ``(1 - phi)/2``; it does not depend on ``i``.
    """
    if not 0 <= i < params.m:
        raise IndexError(f"flip index {i} out of range for m={params.m}")
    return 2.0 * params.w * (1.0 - math.sqrt(1.0 - params.amplitude**2))


def hellinger_sq_bitflip(params: AssouadParams, i: int) -> float:
    """Squared Hellinger distance between P_sigma and P_sigma' when sigma_i goes 1 -> 0.

    With 0/1 bits the flipped cell has eta = 1/2 instead of (1 - phi)/2, giving
    ``w (2 - sqrt(1 + a) - sqrt(1 - a))`` with ``a = q**-r``.
    """
    if not 0 <= i < params.m:
        raise IndexError(f"flip index {i} out of range for m={params.m}")
    a = params.amplitude
    return params.w * (2.0 - math.sqrt(1.0 + a) - math.sqrt(1.0 - a))


def lower_bound_scale(params: AssouadParams) -> float:
    """Leading factor q**-r * m * w of the lower bound, without the sample-size correction."""
    return params.amplitude * params.m * params.w


def lower_bound_value(params: AssouadParams, n: int, C: float = 1.0) -> float:
    """C * q**-r * m * w * (1 - q**-r * sqrt(n w)); nonpositive means vacuous."""
    a = params.amplitude
    return C * lower_bound_scale(params) * (1.0 - a * math.sqrt(n * params.w))


def params_to_config(params: AssouadParams, section: str = "distribution") -> str:
    cp = configparser.ConfigParser()
    cp[section] = {
        "d": str(params.d),
        "q": str(params.q),
        "m": str(params.m),
        "w": repr(params.w),
        "r": repr(params.r),
        "alpha": repr(params.alpha),
        "sigma": "".join(str(s) for s in params.sigma),
        "region_lo": repr(params.region_lo),
        "region_hi": repr(params.region_hi),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def params_from_config(text: str, section: str = "distribution") -> AssouadParams:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    s = cp[section]
    return AssouadParams(
        d=s.getint("d"),
        q=s.getint("q"),
        m=s.getint("m"),
        w=s.getfloat("w"),
        r=s.getfloat("r"),
        alpha=s.getfloat("alpha"),
        sigma=tuple(int(c) for c in s["sigma"].strip()),
        region_lo=s.getfloat("region_lo", DEFAULT_REGION[0]),
        region_hi=s.getfloat("region_hi", DEFAULT_REGION[1]),
    )
