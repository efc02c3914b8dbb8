"""Empirical logistic-risk minimisation over a sized ReLU class, and exact risk evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .networks import Architecture, NetworkSpec, forward, loss_and_gradient, parameter_count
from .surrogate import logistic, optimal_conditional_risk

CSV_COLUMNS = ("n", "seed", "W", "depth", "train_phi_risk", "phi_risk", "excess_phi_risk",
               "zero_one_risk", "excess_risk", "se_excess")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    decay: float = 0.0  # lr_epoch = lr / (1 + decay * epoch)
    batch_size: int = 64
    max_epochs: int = 300
    plateau_tol: float = 1e-5
    plateau_window: int = 10
    restarts: int = 1
    seed: int = 0
    optimizer: str = "adam"  # or "sgd"
    min_epochs: int = 0  # plateau checks start after this many epochs
    standardize: bool = True  # train on standardised inputs, folded back into layer 1 at the end

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("step size must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    net: NetworkSpec
    train_phi_risk: float
    restart: int
    history: list[float] = field(default_factory=list)


def _data_arrays(data):
    if isinstance(data, tuple):
        X, y = data
    elif hasattr(data, "X"):
        X, y = data.X, data.y
    else:
        items = list(data)
        X = np.array([s.x for s in items], dtype=float)
        y = np.array([s.y for s in items])
    return np.asarray(X, dtype=float), np.asarray(y)


class _Adam:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, grad, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return lr * mhat / (np.sqrt(vhat) + self.eps)


def _full_risk(net, X, y) -> float:
    return float(np.mean(logistic((2.0 * y - 1.0) * forward(net, X))))


def _fold_standardization(net: NetworkSpec, mean: np.ndarray, scale: np.ndarray) -> None:
    """Rewrite layer 1 so the net accepts raw x instead of (x - mean) / scale."""
    W = net.weights[0]
    net.biases[0] = net.biases[0] - (mean / scale) @ W
    net.weights[0] = W / scale[:, None]


def _run_once(arch: Architecture, X, y, cfg: TrainConfig, restart: int) -> TrainResult:
    rng = np.random.default_rng([cfg.seed, restart])
    if cfg.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        X = (X - mean) / scale
    net = arch.init(rng)
    theta = net.flat()
    opt = _Adam(theta.size) if cfg.optimizer == "adam" else None
    n = X.shape[0]
    history = [_full_risk(net, X, y)]
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr / (1.0 + cfg.decay * epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = loss_and_gradient(net, X[idx], y[idx])
            g = grads.flat()
            if not (math.isfinite(value) and np.all(np.isfinite(g))):
                raise TrainingError(
                    f"non-finite loss or gradient at restart {restart}, epoch {epoch}, "
                    f"batch offset {start}: loss={value}, last full risk={history[-1]}, lr={lr}")
            theta -= opt.step(g, lr) if opt is not None else lr * g
            net.set_flat(theta)
        risk = _full_risk(net, X, y)
        if not math.isfinite(risk):
            raise TrainingError(f"full-data risk diverged at restart {restart}, epoch {epoch}")
        history.append(risk)
        w = cfg.plateau_window
        if epoch + 1 >= cfg.min_epochs and len(history) > w:
            past = history[-1 - w]
            if past - risk < cfg.plateau_tol * abs(past):
                break
    if cfg.standardize:
        _fold_standardization(net, mean, scale)
    return TrainResult(net, history[-1], restart, history)


def train_erm(arch: Architecture, data, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Multi-restart mini-batch descent on the mean logistic loss; keeps the lowest final risk."""
    X, y = _data_arrays(data)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[1] != arch.d:
        raise ValueError(f"architecture expects d={arch.d}, data has {X.shape[1]}")
    best = None
    for r in range(cfg.restarts):
        res = _run_once(arch, X, y, cfg, r)
        if best is None or res.train_phi_risk < best.train_phi_risk:
            best = res
    return best


def plug_in(net: NetworkSpec, x):
    """1{f(x) >= 0}; an int for one point, an int array for a batch."""
    out = np.asarray(forward(net, x))
    labels = (out >= 0).astype(np.int64)
    return int(labels) if labels.ndim == 0 else labels


@dataclass(frozen=True)
class RiskReport:
    zero_one_risk: float
    phi_risk: float
    excess_risk: float
    excess_phi_risk: float
    se_zero_one: float
    se_phi: float
    se_excess: float
    se_excess_phi: float
    n_eval: int

    def to_row(self, n: int, seed: int, W: int, depth: int, train_phi_risk: float) -> dict:
        return {"n": n, "seed": seed, "W": W, "depth": depth, "train_phi_risk": train_phi_risk,
                "phi_risk": self.phi_risk, "excess_phi_risk": self.excess_phi_risk,
                "zero_one_risk": self.zero_one_risk, "excess_risk": self.excess_risk,
                "se_excess": self.se_excess}


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


def risk_terms(params: dist.AssouadParams, scores: np.ndarray, eta: np.ndarray) -> dict[str, np.ndarray]:
    """Per-point conditional risks given scores f(x) and the exact eta(x)."""
    pred = scores >= 0
    bayes = eta >= 0.5
    phi_pos, phi_neg = logistic(scores), logistic(-scores)
    phi = eta * phi_pos + (1 - eta) * phi_neg
    return {
        "zero_one": np.where(pred, 1 - eta, eta),
        "excess": 2.0 * np.abs(eta - 0.5) * (pred != bayes),
        "phi": phi,
        "excess_phi": phi - optimal_conditional_risk(eta),
    }


def exact_excess_risk(params: dist.AssouadParams, net: NetworkSpec, n_mc: int = 100_000,
                      seed: int = 0) -> RiskReport:
    """Risks of the plug-in rule of ``net`` from n_mc draws of X with the exact eta."""
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    rng = np.random.default_rng(seed)
    X, _ = dist.sample_x(params, n_mc, rng)
    eta = dist.eta_sigma(params, X)
    terms = risk_terms(params, np.asarray(forward(net, X), dtype=float), eta)
    zo, se_zo = _mean_se(terms["zero_one"])
    ph, se_ph = _mean_se(terms["phi"])
    ex, se_ex = _mean_se(terms["excess"])
    exp_, se_exp = _mean_se(terms["excess_phi"])
    return RiskReport(zo, ph, ex, exp_, se_zo, se_ph, se_ex, se_exp, n_mc)


def excess_phi_risk(params: dist.AssouadParams, net: NetworkSpec, n_mc: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo E[phi . f] - inf_g E[phi . g] with the exact conditional expectation."""
    return exact_excess_risk(params, net, n_mc, seed).excess_phi_risk


def describe(net: NetworkSpec) -> tuple[int, int]:
    return parameter_count(net), net.depth
