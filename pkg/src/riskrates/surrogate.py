"""Logistic surrogate loss and its calibration calculus (H, H^-, psi-transform)."""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, xlogy

from .distributions import DomainError

LOG2 = math.log(2.0)


def logistic(t):
    """log(1 + exp(-t)) without overflow for large |t|."""
    out = np.logaddexp(0.0, -np.asarray(t, dtype=float))
    return out if out.ndim else float(out)


def logistic_grad(t):
    """Derivative of the logistic loss, -1 / (1 + exp(t))."""
    out = -expit(-np.asarray(t, dtype=float))
    return out if out.ndim else float(out)


def phi_bullet(g_value, y):
    """phi((2y - 1) g): loss of score g on label y in {0, 1}."""
    return logistic((2 * np.asarray(y) - 1) * np.asarray(g_value, dtype=float))


@dataclass(frozen=True)
class LossProfile:
    """A margin loss together with the clamp bound M of the network outputs."""

    M: float = 4.0
    phi: callable = field(default=logistic, repr=False)
    dphi: callable = field(default=logistic_grad, repr=False)

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("clamp bound M must be positive")


def _check_eta(eta):
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0) or np.any(eta > 1) or np.any(np.isnan(eta)):
        raise DomainError("eta must lie in [0, 1]")
    return eta


def optimal_conditional_risk(eta):
    """H(eta) = inf_a eta phi(a) + (1-eta) phi(-a): the binary entropy in nats."""
    eta = _check_eta(eta)
    out = -xlogy(eta, eta) - xlogy(1.0 - eta, 1.0 - eta)
    return out if out.ndim else float(out)


def constrained_conditional_risk(eta):
    """H^-(eta): infimum over scores of the wrong sign, attained at 0 for logistic loss."""
    eta = _check_eta(eta)
    out = np.full_like(eta, LOG2)
    return out if out.ndim else float(out)


def phi_risk_minimizer(eta):
    """Pointwise phi-risk minimiser log(eta / (1 - eta))."""
    eta = _check_eta(eta)
    if np.any((eta <= 0) | (eta >= 1)):
        raise DomainError("logit is infinite at eta in {0, 1}")
    out = np.log(eta) - np.log1p(-eta)
    return out if out.ndim else float(out)


def _lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by x (monotone chain)."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            cross = (x[k] - x[j]) * (y[i] - y[j]) - (y[k] - y[j]) * (x[i] - x[j])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull)


@dataclass(frozen=True)
class CalibrationTable:
    """H, H^- and the psi-transform tabulated on a uniform grid.

    ``theta`` spans [-1, 1]; the matching eta grid is (1 + theta) / 2, so
    both grids share one index.
    """

    n_points: int = 4097
    theta: np.ndarray = field(init=False, repr=False)
    eta: np.ndarray = field(init=False, repr=False)
    H: np.ndarray = field(init=False, repr=False)
    H_minus: np.ndarray = field(init=False, repr=False)
    psi_tilde: np.ndarray = field(init=False, repr=False)
    psi: np.ndarray = field(init=False, repr=False)
    hull: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.linspace(-1.0, 1.0, self.n_points)
        eta = 0.5 * (1.0 + theta)
        H = optimal_conditional_risk(eta)
        H_minus = constrained_conditional_risk(eta)
        psi_tilde = H_minus - H
        hull = _lower_hull(theta, psi_tilde)
        psi = np.interp(theta, theta[hull], psi_tilde[hull])
        fields = dict(theta=theta, eta=eta, H=H, H_minus=H_minus, psi_tilde=psi_tilde, psi=psi, hull=hull)
        for name, value in fields.items():
            object.__setattr__(self, name, value)

    def psi_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(np.abs(theta) > 1):
            raise DomainError("psi is defined on [-1, 1]")
        out = np.interp(theta, self.theta, self.psi)
        # Between neighbouring hull knots psi_tilde is its own convex envelope, so
        # evaluate it exactly; linear interpolation loses ~1e-5 near |theta| = 1
        # where the slope blows up.
        seg = np.clip(np.searchsorted(self.theta[self.hull], theta, side="right") - 1, 0, len(self.hull) - 2)
        on_curve = np.diff(self.hull)[seg] == 1
        if np.any(on_curve):
            t = theta[on_curve]
            eta = np.clip(0.5 * (1.0 + t), 0.0, 1.0)
            out = np.array(out, dtype=float)
            out[on_curve] = constrained_conditional_risk(eta) - optimal_conditional_risk(eta)
        return out if out.ndim else float(out)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eta", "H", "H_minus", "psi_theta"])
        for row in zip(self.eta, self.H, self.H_minus, self.psi):
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@functools.lru_cache(maxsize=None)
def default_table() -> CalibrationTable:
    return CalibrationTable()


def psi_transform(theta):
    """Convex biconjugate of H^-((1+theta)/2) - H((1+theta)/2), read from the 4097-point table."""
    return default_table().psi_at(theta)


def zhang_constant(s: float = 2.0, n_grid: int = 100001) -> float:
    """Smallest c with |1/2 - eta|^s <= c^s (1 - H(eta)/log 2) on an eta grid.

    The entropy is normalised by phi(0) = log 2 so that 1 - H stays nonnegative.
    The grid omits eta = 1/2 where both sides vanish.
    """
    eta = np.linspace(0.0, 1.0, n_grid)
    eta = eta[eta != 0.5]
    gap = 1.0 - optimal_conditional_risk(eta) / LOG2
    return float(np.max(np.abs(0.5 - eta) / gap ** (1.0 / s)))


def bartlett_excess_bound(excess_phi: float, alpha: float, s: float = 2.0, c: float = 1.0) -> float:
    """c * excess_phi ** ((1 + alpha) / (s + alpha)); alpha = 0 gives Zhang's exponent 1/s."""
    if excess_phi < 0 or s < 1 or alpha < 0:
        raise DomainError("need excess_phi >= 0, s >= 1, alpha >= 0")
    return c * excess_phi ** ((1.0 + alpha) / (s + alpha))


def convexity_modulus_deficit(f_values, g_values, labels, M: float, weights=None) -> float:
    """Midpoint convexity gap of the phi-risk minus the modulus e^-M/16 * d(f, g)^2.

    Expectations are sample means, or weighted sums when ``weights`` (a
    probability vector over the rows) is given, which lets finite-support
    distributions be handled exactly.
    """
    f = np.asarray(f_values, dtype=float)
    g = np.asarray(g_values, dtype=float)
    y = np.asarray(labels)
    if not (f.shape == g.shape == y.shape):
        raise ValueError("f, g and labels must have equal shapes")
    half = M / 2.0
    if np.any(np.abs(f) > half) or np.any(np.abs(g) > half):
        raise DomainError(f"values must lie in [-{half}, {half}]")
    w = np.full(f.shape, 1.0 / f.size) if weights is None else np.asarray(weights, dtype=float)
    risk = lambda v: float(np.sum(w * phi_bullet(v, y)))
    dist_sq = float(np.sum(w * (f - g) ** 2))
    return 0.5 * (risk(f) + risk(g)) - risk(0.5 * (f + g)) - math.exp(-M) / 16.0 * dist_sq


def lipschitz_comparison(f_values, g_values, labels, weights=None) -> tuple[float, float]:
    """(E(phi.f - phi.g)^2, E(f - g)^2) under sample or given weights.

    The logistic loss is 1-Lipschitz so the first entry never exceeds the second.
    """
    f = np.asarray(f_values, dtype=float)
    g = np.asarray(g_values, dtype=float)
    y = np.asarray(labels)
    w = np.full(f.shape, 1.0 / f.size) if weights is None else np.asarray(weights, dtype=float)
    loss_gap = phi_bullet(f, y) - phi_bullet(g, y)
    return float(np.sum(w * loss_gap**2)), float(np.sum(w * (f - g) ** 2))
