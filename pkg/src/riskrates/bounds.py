"""Closed-form calculators for complexity bounds and convergence-rate curves.

Unknown universal constants default to 1 and are exposed as keyword
arguments, so every value here is right in shape, not in magnitude.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import DomainError


class UnboundedError(ArithmeticError):
    """No grid point satisfies the sharp-transform condition."""


def vc_bounds(W: int, L: int, c0: float = 1.0, c1: float = 1.0) -> tuple[float, float]:
    """(c1 W L log(W/L), c0 W L log W) bracketing the VC dimension of depth-L, W-parameter ReLU nets."""
    if L < 1 or W < L:
        raise DomainError(f"need W >= L >= 1, got W={W}, L={L}")
    return c1 * W * L * math.log(W / L), c0 * W * L * math.log(W)


def covering_number_bound(vc_index: float, epsilon: float, r: float = 2.0, K: float = 1.0) -> float:
    """Log of the uniform L_r covering number bound K V e^V (1/eps)^(r(V-1))."""
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    if r < 1:
        raise DomainError("norm order r must be at least 1")
    V = vc_index
    return math.log(K) + math.log(V) + V + r * (V - 1) * math.log(1.0 / epsilon)


def rademacher_bound(v: float, n: int, sigma: float, A: float, F_norm: float, U: float,
                     C: float = 1.0) -> float:
    """Expected sup of the Rademacher process over a VC-type class with envelope norm F_norm."""
    if not 0 < sigma <= F_norm:
        raise DomainError("need 0 < sigma <= F_norm")
    arg = A * F_norm / sigma
    if arg <= 1:
        raise DomainError(f"log argument A*F_norm/sigma = {arg} <= 1")
    lg = math.log(arg)
    return C * max(math.sqrt(v / n) * sigma * math.sqrt(lg), v * U / n * lg)


def rademacher_crossover(v: float, sigma: float, A: float, F_norm: float, U: float) -> float:
    """Sample size above which the sqrt(v/n) branch of rademacher_bound dominates."""
    return v * U**2 * math.log(A * F_norm / sigma) / sigma**2


@dataclass(frozen=True)
class SharpGrid:
    lo: float = 1e-12
    hi: float = 1e6
    size: int = 2**16

    def points(self) -> np.ndarray:
        return np.geomspace(self.lo, self.hi, self.size)


def _evaluate(psi, x):
    try:
        out = np.asarray(psi(x), dtype=float)
        if out.shape == x.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(psi(v)) for v in x])


def flat_transform(psi, delta, grid: SharpGrid = SharpGrid()) -> float:
    """sup_{s >= delta} psi(s)/s, with the supremum taken over grid points and delta itself."""
    g = grid.points()
    g = g[g >= delta]
    vals = _evaluate(psi, np.concatenate([[delta], g]))
    return float(np.max(vals / np.concatenate([[delta], g])))


def sharp_transform(psi: Callable, epsilon: float, grid: SharpGrid = SharpGrid(), tol: float = 1e-12) -> float:
    """inf{delta > 0 : sup_{s >= delta} psi(s)/s <= epsilon}, searched on a geometric grid.

    The running supremum is a suffix maximum over the grid. Between the last
    failing and first passing grid points the threshold is located by bisection,
    using psi(delta)/delta together with the suffix maximum above.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    g = grid.points()
    ratio = _evaluate(psi, g) / g
    if np.any(ratio < 0) or not np.all(np.isfinite(ratio)):
        raise DomainError("psi must be finite and nonnegative on the grid")
    suffix = np.maximum.accumulate(ratio[::-1])[::-1]
    ok = np.flatnonzero(suffix <= epsilon)
    if ok.size == 0 or ok[-1] != g.size - 1:
        raise UnboundedError(f"no delta in [{grid.lo:g}, {grid.hi:g}] has flat transform <= {epsilon:g}")
    # suffix is nonincreasing, so the passing indices form a tail
    k = ok[0]
    if k == 0:
        return float(g[0])
    lo, hi = g[k - 1], g[k]
    above = suffix[k]

    def passes(x):
        return max(float(psi(x)) / x, above) <= epsilon

    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def omega_sharp_bound(V: float, n: float, c: float = 1.0, C: float = 1.0, M: float = 4.0) -> float:
    """Upper bound C V/(n c^2) log(M n c^2 / V) on the sharp transform of the local modulus."""
    return C * V / (n * c**2) * math.log(M * n * c**2 / V)


def phi_tail_bound(omega_sharp_value: float, tau_n: float, alpha: float, t: float, n: float,
                   K: float = 1.0) -> float:
    """K (max{omega_sharp - tau, tau alpha} + t/n + sqrt(t tau / n)): tail bound on the excess phi-risk."""
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    if min(omega_sharp_value, tau_n, t, n) < 0:
        raise DomainError("inputs must be nonnegative")
    return K * (max(omega_sharp_value - tau_n, tau_n * alpha) + t / n + math.sqrt(t * tau_n / n))


def phi_excess_bound(n: float, alpha: float = 1.0, t: float = 1.0, rate: float = 2.0 / 3.0,
                     C: float = 1.0, K: float = 1.0, c: float = 1.0, M: float = 4.0) -> float:
    """phi_tail_bound with V = W(n) = n**rate and approximation error tau = C / sqrt(W(n))."""
    W = n**rate
    tau = C / math.sqrt(W)
    return phi_tail_bound(omega_sharp_bound(W, n, c * alpha, M=M), tau, alpha, t, n, K)


def rate_exponent(alpha: float) -> float:
    return -(1.0 + alpha) / (3.0 * (2.0 + alpha))


def log_exponent(alpha: float) -> float:
    return (1.0 + alpha) / (2.0 + alpha)


def rate_upper(n: float, alpha: float, C: float = 1.0) -> float:
    if n < 2:
        raise DomainError("rate_upper needs n >= 2")
    return C * n ** rate_exponent(alpha) * math.log(n) ** log_exponent(alpha)


def rate_lower(n: float, alpha: float, C: float = 1.0) -> float:
    if n < 1:
        raise DomainError("rate_lower needs n >= 1")
    return C * n ** rate_exponent(alpha)


def approximation_rate(budget: float, C: float = 1.0) -> float:
    """C / sqrt(budget): sup-norm error of a width- or parameter-budget approximant."""
    if budget < 1:
        raise DomainError("budget must be at least 1")
    return C / math.sqrt(budget)


def phi_rate_upper(n: float, alpha: float = 1.0, C: float = 1.0) -> float:
    # with W(n) = n^(2/3) the excess phi-risk bound decays like n^(-1/3) log n
    if n < 2:
        raise DomainError("phi_rate_upper needs n >= 2")
    return C * n ** (-1.0 / 3.0) * math.log(n)


_KINDS = {"upper": rate_upper, "lower": rate_lower, "phi_upper": phi_rate_upper}


@dataclass(frozen=True)
class RateCurve:
    """A rate curve n -> value. The log-corrected kinds decrease only for n > e**3."""

    alpha: float
    constant: float = 1.0
    kind: str = "upper"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {sorted(_KINDS)}")
        if not self.constant > 0:
            raise ValueError("constant must be positive")

    @property
    def exponent(self) -> float:
        return -1.0 / 3.0 if self.kind == "phi_upper" else rate_exponent(self.alpha)

    def __call__(self, n: float) -> float:
        return _KINDS[self.kind](n, self.alpha, self.constant)

    def table(self, ns) -> list[dict]:
        return [{"n": int(n), "value": self(n), "kind": self.kind, "alpha": self.alpha} for n in ns]


def write_curves(path, curves, ns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["n", "value", "kind", "alpha"], lineterminator="\n")
        writer.writeheader()
        for curve in curves:
            writer.writerows(curve.table(ns))
