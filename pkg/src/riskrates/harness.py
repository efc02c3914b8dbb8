"""Seeded sweeps of train-and-evaluate cells, log-log rate fits, and theory comparison."""

from __future__ import annotations

import configparser
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import bounds
from . import distributions as dist
from .networks import sized_architecture
from .training import CSV_COLUMNS, TrainConfig, TrainingError, exact_excess_risk, train_erm

SWEEP_COLUMNS = CSV_COLUMNS + ("status",)
RESULTS_FILE = "results.csv"


class ConfigError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class DistributionSpec:
    """Canonical construction for (d, q, alpha) unless m, w and r are all given."""

    d: int = 2
    q: int = 4
    alpha: float = 1.0
    sigma: str = "all_ones"  # all_ones, random, or an explicit 0/1 string
    sigma_seed: int = 0
    m: int | None = None
    w: float | None = None
    r: float | None = None

    def build(self) -> dist.AssouadParams:
        explicit = (self.m, self.w, self.r)
        if all(v is None for v in explicit):
            policy = self.sigma if self.sigma in ("all_ones", "random") else tuple(int(c) for c in self.sigma)
            return dist.canonical_params(self.d, self.q, self.alpha, policy, self.sigma_seed)
        if any(v is None for v in explicit):
            raise ConfigError("give all of m, w, r or none of them")
        if self.sigma == "all_ones":
            sigma = (1,) * self.m
        elif self.sigma == "random":
            sigma = tuple(np.random.default_rng(self.sigma_seed).integers(0, 2, self.m).tolist())
        else:
            sigma = tuple(int(c) for c in self.sigma)
        return dist.AssouadParams(d=self.d, q=self.q, m=self.m, w=self.w, r=self.r, alpha=self.alpha, sigma=sigma)


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: DistributionSpec = DistributionSpec()
    ns: tuple[int, ...] = tuple(2**k for k in range(7, 14))
    seeds: int = 5
    train: TrainConfig = TrainConfig()
    rate_constant: float = 1.0
    depth: int = 11
    M: float = 4.0
    n_mc: int = 100_000
    mc_seed: int = 0
    data_seed: int = 0
    workers: int = 1
    output_dir: str = "sweep_out"

    def __post_init__(self):
        if len(self.ns) < 1 or any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ConfigError(f"n grid must be strictly increasing, got {self.ns}")
        if self.seeds < 3:
            raise ConfigError("need at least 3 seeds per n")
        if self.workers < 1:
            raise ConfigError("workers must be positive")


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def _section(cp, name, cls, defaults=None):
    """Build dataclass ``cls`` from section ``name``, ignoring absent keys."""
    defaults = defaults or cls()
    kwargs = {}
    if cp.has_section(name):
        known = {f.name for f in fields(cls)}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            current = getattr(defaults, key)
            if current is None:
                kwargs[key] = int(raw) if key == "m" else float(raw)
            else:
                kwargs[key] = _parse_value(raw, current)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """INI text with sections [distribution], [grid], [training], [architecture], [evaluation], [output]."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    spec = _section(cp, "distribution", DistributionSpec)
    train = _section(cp, "training", TrainConfig)
    grid = cp["grid"] if cp.has_section("grid") else {}
    if "ns" in grid:
        ns = tuple(int(v) for v in grid["ns"].replace(",", " ").split())
    elif "log2_n_min" in grid or "log2_n_max" in grid:
        ns = tuple(2**k for k in range(int(grid.get("log2_n_min", 7)), int(grid.get("log2_n_max", 13)) + 1))
    else:
        ns = ExperimentConfig.ns
    arch = cp["architecture"] if cp.has_section("architecture") else {}
    ev = cp["evaluation"] if cp.has_section("evaluation") else {}
    out = cp["output"] if cp.has_section("output") else {}
    return ExperimentConfig(
        distribution=spec, ns=ns, seeds=int(grid.get("seeds", 5)), train=train,
        rate_constant=float(arch.get("rate_constant", 1.0)), depth=int(arch.get("depth", 11)),
        M=float(arch.get("m", 4.0)), n_mc=int(ev.get("n_mc", 100_000)), mc_seed=int(ev.get("mc_seed", 0)),
        data_seed=int(grid.get("data_seed", 0)), workers=int(out.get("workers", 1)),
        output_dir=out.get("directory", "sweep_out"),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_cell(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    """Train and evaluate one (n, seed) cell; a divergent run yields a failed row."""
    params = cfg.distribution.build()
    arch = sized_architecture(n, cfg.rate_constant, cfg.depth, params.d, cfg.M)
    data_seed = int(np.random.SeedSequence([cfg.data_seed, n, seed]).generate_state(1)[0])
    data = dist.sample(params, n, data_seed)
    train_cfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    try:
        res = train_erm(arch, data, train_cfg)
    except TrainingError:
        row = {c: "nan" for c in CSV_COLUMNS}
        row.update(n=n, seed=seed, W=arch.parameter_count, depth=arch.depth, status="failed")
        return row
    rep = exact_excess_risk(params, res.net, cfg.n_mc, cfg.mc_seed)
    row = rep.to_row(n, seed, arch.parameter_count, arch.depth, res.train_phi_risk)
    row["status"] = "ok"
    return row


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_sorted(path: Path, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: (int(r["n"]), int(r["seed"])))
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row[k]) if not isinstance(row[k], str) else row[k] for k in SWEEP_COLUMNS})
    os.replace(tmp, path)


def run_sweep(cfg: ExperimentConfig, progress=None) -> list[dict]:
    """Run every missing (n, seed) cell and return the full table sorted by (n, seed).

    Finished rows are appended to ``results.csv`` as they arrive, so an
    interrupted sweep resumes where it stopped. The file is rewritten sorted
    once all cells are done.
    """
    cfg.distribution.build()  # admissibility is checked before any training
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESULTS_FILE
    rows = _read_rows(path)
    done = {(int(r["n"]), int(r["seed"])) for r in rows}
    todo = [(n, s) for n in cfg.ns for s in range(cfg.seeds) if (n, s) not in done]

    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        if new_file:
            writer.writeheader()

        def record(row):
            formatted = {k: row[k] if isinstance(row[k], str) else _format(row[k]) for k in SWEEP_COLUMNS}
            writer.writerow(formatted)
            fh.flush()
            rows.append(formatted)
            if progress:
                progress(formatted)

        if cfg.workers == 1:
            for n, s in todo:
                record(run_cell(cfg, n, s))
        else:
            with ProcessPoolExecutor(cfg.workers) as pool:
                for row in pool.map(run_cell, [cfg] * len(todo), *zip(*todo)) if todo else []:
                    record(row)
    _write_sorted(path, rows)
    return _read_rows(path)


@dataclass(frozen=True)
class RateFit:
    exponent: float
    intercept: float
    residual_se: float
    band: tuple[float, float]
    theory_exponent: float
    log_correction: bool
    alpha: float
    ns: tuple[int, ...] = field(default=())
    medians: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        d["ns"] = list(self.ns)
        d["medians"] = list(self.medians)
        return d


def _ok_rows(rows):
    return [r for r in rows if r.get("status", "ok") == "ok"]


def median_by_n(rows, column: str = "excess_risk") -> dict[int, tuple[float, float]]:
    """Median of ``column`` per n with the MC standard error of the median row.

    With an even seed count the median is the midpoint of two rows and its
    standard error is taken from the larger of the two.
    """
    groups: dict[int, list[tuple[float, float]]] = {}
    for r in _ok_rows(rows):
        groups.setdefault(int(r["n"]), []).append((float(r[column]), float(r.get("se_excess", 0.0))))
    out = {}
    for n in sorted(groups):
        vals = sorted(groups[n])
        k = len(vals)
        if k % 2:
            out[n] = vals[k // 2]
        else:
            a, b = vals[k // 2 - 1], vals[k // 2]
            out[n] = ((a[0] + b[0]) / 2, max(a[1], b[1]))
    return out


def fit_rate(rows, use_log_correction: bool = False, alpha: float = 1.0, level: float = 0.95) -> RateFit:
    """OLS of log(median excess risk) on log n with a t-based confidence band for the slope."""
    counts: dict[int, int] = {}
    for r in _ok_rows(rows):
        counts[int(r["n"])] = counts.get(int(r["n"]), 0) + 1
    usable = sorted(n for n, c in counts.items() if c >= 3)
    if len(usable) < 4:
        raise FitError(f"need at least 4 distinct n with >= 3 seeds, have {len(usable)}")
    med = median_by_n([r for r in rows if int(r["n"]) in usable])
    ns = np.array(usable, dtype=float)
    m = np.array([med[n][0] for n in usable])
    if np.any(m <= 0):
        bad = [n for n in usable if med[n][0] <= 0]
        raise FitError(f"nonpositive median excess risk at n = {bad}; cannot take log")
    y = np.log(m)
    if use_log_correction:
        y = y - bounds.log_exponent(alpha) * np.log(np.log(ns))
    x = np.log(ns)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    s = math.sqrt(float(resid @ resid) / dof)
    se_slope = s / math.sqrt(float(np.sum((x - x.mean()) ** 2)))
    half = stats.t.ppf(0.5 + level / 2, dof) * se_slope
    slope = float(coef[1])
    return RateFit(slope, float(coef[0]), s, (slope - half, slope + half), bounds.rate_exponent(alpha),
                   use_log_correction, alpha, tuple(usable), tuple(float(v) for v in m))


def band_intersects(fit: RateFit, lo: float, hi: float) -> bool:
    return bool(fit.band[0] <= hi and fit.band[1] >= lo)


def compare_to_theory(fit: RateFit, lower: bounds.RateCurve, upper: bounds.RateCurve, slack: float = 0.1) -> dict:
    """Verdict on whether the fitted exponent band meets theory +- slack, with measured/lower ratios."""
    if not (lower.alpha == upper.alpha == fit.alpha):
        raise ValueError("curves and fit must share alpha")
    theory = fit.theory_exponent
    ratios = [m / lower(n) for n, m in zip(fit.ns, fit.medians)]
    upper_ratios = [m / upper(n) for n, m in zip(fit.ns, fit.medians)]
    return {
        "pass": band_intersects(fit, theory - slack, theory + slack),
        "fitted_exponent": fit.exponent,
        "band": list(fit.band),
        "theory_exponent": theory,
        "slack": slack,
        "ns": list(fit.ns),
        "ratio_to_lower": ratios,
        "ratio_to_upper": upper_ratios,
    }


def nonincreasing_medians(rows, k_se: float = 2.0, max_inversions: int = 1) -> tuple[bool, list[int]]:
    """Medians nonincreasing in n, tolerating up to ``max_inversions`` rises within k_se MC errors.

    Returns the verdict and the list of n at which the median rose.
    """
    med = median_by_n(rows)
    ns = sorted(med)
    rises, ok = [], True
    for a, b in zip(ns, ns[1:]):
        (ma, sa), (mb, sb) = med[a], med[b]
        if mb > ma:
            rises.append(b)
            if mb - ma > k_se * math.hypot(sa, sb):
                ok = False
    return ok and len(rises) <= max_inversions, rises


def distribution_check(params: dist.AssouadParams, n_mc: int = 1_000_000, n_cdf: int = 100_000,
                       n_t: int = 50, seed: int = 0) -> dict:
    """Bayes risk and margin CDF against Monte Carlo, with per-point tolerances."""
    rng = np.random.default_rng(seed)
    X, _ = dist.sample_x(params, n_mc, rng)
    eta = dist.eta_sigma(params, X)
    loss = np.minimum(eta, 1 - eta)
    mc = float(loss.mean())
    se = float(loss.std(ddof=1) / math.sqrt(n_mc))
    exact = dist.bayes_risk(params)
    Xc, _ = dist.sample_x(params, n_cdf, rng)
    eta_c = dist.eta_sigma(params, Xc)
    ts = np.linspace(0.0, 0.5, n_t)
    emp = dist.empirical_margin_cdf(eta_c, ts)
    ex = dist.margin_cdf(params, ts)
    sd = np.sqrt(np.maximum(ex * (1 - ex), 1.0 / n_cdf) / n_cdf)
    cdf_rows = [{"t": float(t), "exact": float(e), "empirical": float(m), "se": float(s),
                 "ok": bool(abs(m - e) <= 4 * s)} for t, e, m, s in zip(ts, ex, emp, sd)]
    return {
        "bayes_risk": exact,
        "bayes_risk_mc": mc,
        "bayes_risk_se": se,
        "bayes_ok": bool(abs(mc - exact) <= 3 * se),
        "cdf": cdf_rows,
        "cdf_ok": all(r["ok"] for r in cdf_rows),
    }


def write_distribution_check(result: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "t", "exact", "estimate", "se", "ok"])
        writer.writerow(["bayes_risk", "", repr(result["bayes_risk"]), repr(result["bayes_risk_mc"]),
                         repr(result["bayes_risk_se"]), result["bayes_ok"]])
        for r in result["cdf"]:
            writer.writerow(["margin_cdf", repr(r["t"]), repr(r["exact"]), repr(r["empirical"]), repr(r["se"]), r["ok"]])
