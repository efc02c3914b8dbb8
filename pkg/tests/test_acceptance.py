"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture."""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, optimize

from riskrates import bounds as B
from riskrates import constructive as C
from riskrates import distributions as D
from riskrates import harness as Hn
from riskrates import networks as N
from riskrates.surrogate import (constrained_conditional_risk, default_table, lipschitz_comparison,
                                 optimal_conditional_risk)

CONFIGS = Path(__file__).parent / "configs"


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, elapsed=None, limit=None):
        within = elapsed is None or limit is None or elapsed < limit
        timing = f" [{elapsed:.1f}s / {limit:g}s]" if elapsed is not None and limit is not None else ""
        verdict = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {k}: {verdict}: {detail}{timing}")
        assert ok, detail
        assert within, f"runtime {elapsed:.1f}s over {limit}s"
    return emit


def small_params():
    return D.AssouadParams(d=2, q=2, m=2, w=0.1, r=1.0, alpha=1.0, sigma=(1, 1))


def test_distribution_exactness(report, tmp_path):
    t0 = time.perf_counter()
    params = small_params()
    res = Hn.distribution_check(params, n_mc=1_000_000, n_cdf=100_000, n_t=50, seed=0)
    elapsed = time.perf_counter() - t0
    exact_ok = abs(res["bayes_risk"] - 0.45) < 1e-15
    worst = max(abs(r["empirical"] - r["exact"]) / r["se"] for r in res["cdf"])
    ok = exact_ok and res["bayes_ok"] and res["cdf_ok"]
    report(1, ok, f"bayes_risk={res['bayes_risk']:.6f} mc={res['bayes_risk_mc']:.6f}+-{res['bayes_risk_se']:.1e}, "
                  f"worst margin-cdf deviation {worst:.2f} SE", elapsed, 30)


def _h_oracle(t):
    # normalised bump by direct quadrature of the smooth transition
    def h1(s):
        return math.exp(-1.0 / ((0.5 - s) * (s - 0.25))) if 0.25 < s < 0.5 else 0.0
    if t <= 0.25:
        return 1.0
    if t >= 0.5:
        return 0.0
    return integrate.quad(h1, t, 0.5, epsabs=0, epsrel=1e-13)[0] / integrate.quad(h1, 0.25, 0.5, epsabs=0, epsrel=1e-13)[0]


def test_hellinger_closed_form(report):
    t0 = time.perf_counter()
    params = small_params()
    h = D.hellinger_sq(params, 0)
    q, r, w = 2, 1.0, 0.1
    rad = 1.0 / (4 * q)
    dens = w / (math.pi * rad**2)

    def integrand(rho, theta):
        bump = q ** (-r) * _h_oracle(q * rho)
        a, b = (1 + bump) / 2, (1 - bump) / 2
        return ((math.sqrt(a) - math.sqrt(b)) ** 2 + (math.sqrt(1 - a) - math.sqrt(1 - b)) ** 2) * dens * rho

    quad = integrate.dblquad(integrand, 0, 2 * math.pi, 0, rad, epsabs=1e-12, epsrel=1e-10)[0]
    elapsed = time.perf_counter() - t0
    ok = abs(h - 0.0267949) <= 1e-6 and abs(h - quad) <= 1e-6 and h <= 2 * w * q ** (-2 * r)
    report(2, ok, f"closed form {h:.7f}, quadrature {quad:.7f}, cap {2 * w * q ** (-2 * r):.3f}", elapsed, 5)


def test_calibration_suite(report):
    t0 = time.perf_counter()
    eta = np.linspace(0, 1, 1001)
    off = eta[np.abs(eta - 0.5) > 1e-12]
    gap_ok = bool(np.all(constrained_conditional_risk(off) - optimal_conditional_risk(off) > 0))

    def phi_risk(t, e):
        return e * np.logaddexp(0, -t) + (1 - e) * np.logaddexp(0, t)

    worst = 0.0
    for e in np.linspace(0.01, 0.99, 41):
        res = optimize.minimize_scalar(phi_risk, bounds=(-50, 50), args=(e,), method="bounded",
                                       options={"xatol": 1e-12})
        worst = max(worst, abs(float(optimal_conditional_risk(e)) - res.fun))
    table = default_table()
    theta = np.linspace(-1, 1, 2001)
    psi = table.psi_at(theta)
    second = psi[2:] - 2 * psi[1:-1] + psi[:-2]
    convex = bool(np.all(second >= -1e-12))
    p0, p1 = table.psi_at(0.0), table.psi_at(1.0)
    elapsed = time.perf_counter() - t0
    ok = gap_ok and worst <= 1e-8 and abs(p0) <= 1e-12 and convex and abs(p1 - math.log(2)) <= 1e-6
    report(3, ok, f"gap>0 {gap_ok}, H vs minimiser {worst:.1e}, psi(0)={p0:.1e}, convex {convex}, "
                  f"psi(1)-log2={p1 - math.log(2):.1e}", elapsed, 5)


def _kink_free(rng, d, widths, n=6, margin=1e-3):
    while True:
        net = N.glorot_init(d, widths, 8.0, rng)
        for b in net.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)
        X = rng.normal(size=(n, d))
        h, ok = X, True
        for W, b in zip(net.weights[:-1], net.biases[:-1]):
            z = h @ W + b
            ok &= bool(np.all(np.abs(z) > margin))
            h = np.maximum(z, 0)
        ok &= bool(np.all(np.abs(N.forward_raw(net, X)[:, 0]) < net.clamp - 0.05))
        if ok:
            return net, X, rng.integers(0, 2, n)


def test_gradient_correctness(report):
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for d, widths in [(2, (3,)), (3, (5, 4)), (1, (6, 6, 6)), (4, (2, 7)), (2, (4, 4, 4, 4))]:
        rng = np.random.default_rng(100 + d + sum(widths))
        net, X, y = _kink_free(rng, d, widths)
        g = N.loss_and_gradient(net, X, y)[1].flat()
        theta = net.flat()
        picks = rng.choice(np.flatnonzero(np.abs(g) > 1e-6), size=10, replace=False)
        for k in picks:
            e = np.zeros_like(theta)
            e[k] = 1e-6
            net.set_flat(theta + e)
            fp = N.empirical_phi_risk(net, X, y)
            net.set_flat(theta - e)
            fm = N.empirical_phi_risk(net, X, y)
            net.set_flat(theta)
            fd = (fp - fm) / 2e-6
            worst = max(worst, abs(g[k] - fd) / abs(fd))
            checked += 1
    elapsed = time.perf_counter() - t0
    report(4, checked == 50 and worst <= 1e-5, f"{checked} coordinates, worst relative error {worst:.1e}", elapsed, 10)


def test_constructive_rates(report):
    t0 = time.perf_counter()
    g = np.linspace(-1, 1, 401)
    P = np.column_stack([a.ravel() for a in np.meshgrid(g, g)])
    ps = [16, 32, 64, 128, 256, 512, 1024]
    errs = [np.max(np.abs(N.forward(C.build_mul_network(1.0, p).net, P) - P[:, 0] * P[:, 1])) for p in ps]
    slope = float(np.polyfit(np.log(ps), np.log(errs), 1)[0])
    rng = np.random.default_rng(11)
    mul = C.build_mul_network(1.0, 256).net
    x = rng.uniform(-1, 1, 1000)
    z = np.zeros(1000)
    zero_ok = bool(np.all(N.forward(mul, np.column_stack([x, z])) == 0) and np.all(N.forward(mul, np.column_stack([z, x])) == 0))
    glue = C.build_glue_network([0.0, 0.0], [1.0, 1.0], 0.1, 2.0).net
    inner = np.column_stack([rng.uniform(0.1, 0.9, (10_000, 2)), rng.uniform(-1.9, 1.9, 10_000)])
    outside = rng.uniform(-4, 5, (60_000, 2))
    outside = outside[np.any((outside < 0) | (outside > 1), axis=1)][:10_000]
    outer = np.column_stack([outside, rng.uniform(-1.9, 1.9, 10_000)])
    glue_ok = bool(np.array_equal(N.forward(glue, inner), inner[:, 2]) and np.all(N.forward(glue, outer) == 0))
    elapsed = time.perf_counter() - t0
    ok = -0.65 <= slope <= -0.35 and zero_ok and glue_ok
    report(5, ok, f"mul slope {slope:.3f}, zero-product exact {zero_ok}, glue identities exact {glue_ok}", elapsed, 120)


def test_lipschitz_comparison(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(21)
    held = 0
    for _ in range(100):
        k = int(rng.integers(3, 12))
        support = rng.uniform(-2, 2, (k, 2))
        mass = rng.dirichlet(np.ones(k))
        eta = rng.uniform(0, 1, k)
        X = np.repeat(support, 2, axis=0)
        y = np.tile([1, 0], k)
        w = np.repeat(mass, 2) * np.column_stack([eta, 1 - eta]).ravel()
        f = N.forward(N.glorot_init(2, (8, 8), 4.0, rng), X)
        g = N.forward(N.glorot_init(2, (8, 8), 4.0, rng), X)
        lhs, rhs = lipschitz_comparison(f, g, y, w)
        held += lhs <= rhs
    elapsed = time.perf_counter() - t0
    report(6, held == 100, f"inequality held on {held}/100 network pairs", elapsed, 30)


def test_sharp_transform_oracle(report):
    t0 = time.perf_counter()
    errs = [abs(B.sharp_transform(np.sqrt, e) / e**-2 - 1) for e in (0.01, 0.1, 1.0)]
    funcs = [np.sqrt, lambda d: d**0.3, lambda d: np.sqrt(d) * np.log1p(1 / d),
             lambda d: np.sqrt(d) + d**0.7, lambda d: np.minimum(np.sqrt(d), 0.5 + 0.1 * d**0.25)]
    c = 2.5
    worst = 0.0
    for psi in funcs:
        for eps in (0.05, 0.3):
            lhs = B.sharp_transform(lambda d, psi=psi: psi(c * d), eps)
            rhs = B.sharp_transform(psi, eps / c) / c
            worst = max(worst, abs(lhs / rhs - 1))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-3 and worst <= 1e-3
    report(7, ok, f"sqrt oracle worst rel {max(errs):.1e}, scaling identity worst rel {worst:.1e}", elapsed, 10)


def test_rate_curve_algebra(report):
    t0 = time.perf_counter()
    worst = 0.0
    for n in [10.0**k for k in range(1, 9)]:
        for a in (0.0, 1.0, 4.0):
            ratio = B.rate_upper(n, a) / B.rate_lower(n, a)
            worst = max(worst, abs(ratio / math.log(n) ** B.log_exponent(a) - 1))
    ns = np.array([10.0**k for k in range(3, 8)])
    vals = [B.phi_excess_bound(n) / math.log(n) for n in ns]
    slope = float(np.polyfit(np.log(ns), np.log(vals), 1)[0])
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and abs(slope + 1 / 3) <= 0.05
    report(8, ok, f"ratio worst rel {worst:.1e}, tail-bound slope after log {slope:.4f}", elapsed, 5)


@pytest.fixture(scope="module")
def sweeps(tmp_path_factory):
    """The acceptance sweep run twice into separate directories, with timings."""
    base = Hn.load_config(CONFIGS / "acceptance_sweep.ini")
    out = []
    for tag in ("first", "second"):
        cfg = Hn.ExperimentConfig(**{**base.__dict__, "output_dir": str(tmp_path_factory.mktemp(tag))})
        t0 = time.perf_counter()
        rows = Hn.run_sweep(cfg)
        out.append((cfg, rows, time.perf_counter() - t0))
    return out


def test_end_to_end_convergence(report, sweeps):
    cfg, rows, elapsed = sweeps[0]
    med = Hn.median_by_n(rows)
    trail = ", ".join(f"{n}:{m:.2e}" for n, (m, _) in med.items())
    monotone, rises = Hn.nonincreasing_medians(rows, k_se=2.0, max_inversions=1)
    try:
        fit = Hn.fit_rate(rows, use_log_correction=True, alpha=1.0)
        band_ok = Hn.band_intersects(fit, -0.40, -0.05)
        fit_note = f"slope {fit.exponent:.3f} band [{fit.band[0]:.3f}, {fit.band[1]:.3f}]"
    except Hn.FitError as exc:
        band_ok = False
        fit_note = f"fit undefined ({exc})"
    report(9, monotone and band_ok, f"medians {trail}; rises at {rises}; {fit_note}", elapsed, 1800)


def test_determinism(report, sweeps, tmp_path):
    sweep_same = all((Path(cfg.output_dir) / Hn.RESULTS_FILE).read_bytes() ==
                     (Path(sweeps[0][0].output_dir) / Hn.RESULTS_FILE).read_bytes() for cfg, _, _ in sweeps)
    blobs = []
    for k in range(2):
        res = Hn.distribution_check(small_params(), seed=0)
        path = tmp_path / f"dist{k}.csv"
        Hn.write_distribution_check(res, path)
        blobs.append(path.read_bytes())
    dist_same = blobs[0] == blobs[1]
    report(10, sweep_same and dist_same, f"sweep CSVs identical {sweep_same}, distribution-check CSVs identical {dist_same}")
