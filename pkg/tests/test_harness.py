import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from riskrates import bounds as B
from riskrates import cli
from riskrates import harness as Hn
from riskrates.training import TrainConfig, TrainingError

CONFIGS = Path(__file__).parent / "configs"

TINY = """
[distribution]
d = 2
q = 2
m = 2
w = 0.1
r = 1.0
alpha = 1.0

[grid]
ns = 32 48 64 96
seeds = 3

[training]
max_epochs = 3
batch_size = 16

[architecture]
rate_constant = 1
depth = 3

[evaluation]
n_mc = 500
"""


def tiny_config(tmp_path, **over):
    cfg = Hn.parse_config(TINY)
    return Hn.ExperimentConfig(**{**cfg.__dict__, "output_dir": str(tmp_path / "out"), **over})


def synthetic_rows(ns, values, seeds=3):
    return [{"n": str(n), "seed": str(s), "excess_risk": repr(float(v)), "se_excess": "0.0", "status": "ok"}
            for n, v in zip(ns, values) for s in range(seeds)]


class TestConfig:
    def test_parse(self):
        cfg = Hn.load_config(CONFIGS / "acceptance_sweep.ini")
        assert cfg.ns == tuple(2**k for k in range(7, 14))
        assert cfg.train.min_epochs == 300 and cfg.train.lr == 0.005
        assert cfg.depth == 3 and cfg.rate_constant == 16.0 and cfg.mc_seed == 99
        params = cfg.distribution.build()
        assert params.m == 16 and set(params.sigma) == {1}

    def test_explicit_distribution(self):
        params = Hn.load_config(CONFIGS / "small_distribution.ini").distribution.build()
        assert (params.q, params.m, params.w, params.sigma) == (2, 2, 0.1, (1, 1))

    @pytest.mark.parametrize("text", ["[grid]\nns = 64 32\n", "[grid]\nseeds = 2\n", "[training]\nfoo = 1\n",
                                      "[distribution]\nm = 2\n", "[training]\nlr = -1\n"])
    def test_invalid(self, text):
        with pytest.raises(Hn.ConfigError):
            Hn.parse_config(text).distribution.build()

    def test_inadmissible_rejected_before_training(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path, distribution=Hn.DistributionSpec(d=2, q=2, m=2, w=0.9, r=1.0))
        monkeypatch.setattr(Hn, "train_erm", lambda *a, **k: pytest.fail("trained"))
        with pytest.raises(ValueError):
            Hn.run_sweep(cfg)


class TestSweep:
    def test_cardinality_and_resume(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path)
        rows = Hn.run_sweep(cfg)
        assert len(rows) == 12 and all(r["status"] == "ok" for r in rows)
        assert [(int(r["n"]), int(r["seed"])) for r in rows] == sorted((n, s) for n in cfg.ns for s in range(3))
        path = Path(cfg.output_dir) / Hn.RESULTS_FILE
        full = path.read_bytes()

        calls = []
        monkeypatch.setattr(Hn, "run_cell", lambda *a: calls.append(a))
        Hn.run_sweep(cfg)
        assert calls == [] and path.read_bytes() == full
        monkeypatch.undo()

        # drop the last five rows and resume: same bytes as the uninterrupted run
        lines = full.decode().splitlines(keepends=True)
        path.write_text("".join(lines[:-5]))
        Hn.run_sweep(cfg)
        assert path.read_bytes() == full

    def test_failed_rows(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise TrainingError("diverged")
        monkeypatch.setattr(Hn, "train_erm", boom)
        rows = Hn.run_sweep(tiny_config(tmp_path))
        assert len(rows) == 12 and all(r["status"] == "failed" for r in rows)
        with pytest.raises(Hn.FitError):
            Hn.fit_rate(rows)

    def test_worker_pool_matches_serial(self, tmp_path):
        a = Hn.run_sweep(tiny_config(tmp_path / "a"))
        b = Hn.run_sweep(tiny_config(tmp_path / "b", workers=2))
        assert a == b


class TestFit:
    ns = [2**k for k in range(7, 15)]

    def test_exact_power_law(self):
        fit = Hn.fit_rate(synthetic_rows(self.ns, [n ** (-1 / 3) for n in self.ns]))
        assert fit.exponent == pytest.approx(-1 / 3, abs=1e-9)
        assert fit.band[0] <= fit.exponent <= fit.band[1]

    def test_log_corrected_round_trip(self):
        vals = [n ** (-2 / 9) * math.log(n) ** (2 / 3) for n in self.ns]
        fit = Hn.fit_rate(synthetic_rows(self.ns, vals), use_log_correction=True, alpha=1.0)
        assert fit.exponent == pytest.approx(-2 / 9, abs=1e-6)
        assert fit.theory_exponent == pytest.approx(-2 / 9)

    def test_noisy_coverage(self):
        rng = np.random.default_rng(0)
        hits = 0
        for _ in range(100):
            rows = []
            for n in self.ns:
                for s in range(5):
                    v = n ** (-1 / 3) * math.exp(rng.normal(scale=0.1))
                    rows.append({"n": n, "seed": s, "excess_risk": v, "se_excess": 0.0, "status": "ok"})
            fit = Hn.fit_rate(rows)
            assert fit.band[1] > fit.band[0]
            hits += fit.band[0] <= -1 / 3 <= fit.band[1]
        assert hits >= 85

    def test_errors(self):
        with pytest.raises(Hn.FitError, match="nonpositive"):
            Hn.fit_rate(synthetic_rows(self.ns, [0.0] + [1.0] * 7))
        with pytest.raises(Hn.FitError, match="at least 4"):
            Hn.fit_rate(synthetic_rows(self.ns[:3], [1, 2, 3]))
        with pytest.raises(Hn.FitError):
            Hn.fit_rate(synthetic_rows(self.ns, [1.0] * 8, seeds=2))

    def test_median_even_seeds(self):
        rows = [{"n": 8, "seed": s, "excess_risk": v, "se_excess": se, "status": "ok"}
                for s, (v, se) in enumerate([(1.0, 0.1), (3.0, 0.3), (2.0, 0.2), (9.0, 0.9)])]
        assert Hn.median_by_n(rows) == {8: (2.5, 0.3)}


def fake_fit(slope, alpha=1.0, half=0.01):
    ns = (128, 256, 512, 1024)
    return Hn.RateFit(slope, 0.0, 0.0, (slope - half, slope + half), B.rate_exponent(alpha), False, alpha,
                      ns, tuple(n**slope for n in ns))


class TestCompare:
    def test_verdicts(self):
        lo, up = B.RateCurve(1.0, kind="lower"), B.RateCurve(1.0, kind="upper")
        assert Hn.compare_to_theory(fake_fit(-0.22), lo, up)["pass"]
        assert not Hn.compare_to_theory(fake_fit(-0.5), lo, up)["pass"]

    def test_ratio_trajectory(self):
        lo, up = B.RateCurve(1.0, kind="lower"), B.RateCurve(1.0, kind="upper")
        res = Hn.compare_to_theory(fake_fit(B.rate_exponent(1.0)), lo, up)
        assert np.allclose(res["ratio_to_lower"], 1.0)

    def test_alpha_mismatch(self):
        with pytest.raises(ValueError):
            Hn.compare_to_theory(fake_fit(-0.2), B.RateCurve(0.0, kind="lower"), B.RateCurve(1.0))

    def test_nonincreasing(self):
        def rows(vals, se):
            return [{"n": n, "seed": 0, "excess_risk": v, "se_excess": se, "status": "ok"} for n, v in zip(TestFit.ns, vals)]
        assert Hn.nonincreasing_medians(rows([5, 4, 3, 2], 0.1)) == (True, [])
        assert Hn.nonincreasing_medians(rows([5, 4, 4.1, 2], 0.1)) == (True, [512])
        assert not Hn.nonincreasing_medians(rows([5, 4, 6, 2], 0.1))[0]
        assert not Hn.nonincreasing_medians(rows([5, 5.1, 4, 4.1], 0.1))[0]


class TestCLI:
    def test_curves(self, tmp_path):
        out = tmp_path / "c.csv"
        assert cli.main(["curves", "--alpha", "1", "--n-min", "128", "--n-max", "1024", "--points", "4",
                         "--output", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert {r["kind"] for r in rows} == {"upper", "lower", "phi_upper"} and len(rows) == 12

    def test_calib_table(self, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.main(["calib-table", "--output", str(out)]) == 0
        assert out.read_text().splitlines()[0] == "eta,H,H_minus,psi_theta"

    def test_fit_exit_codes(self, tmp_path, capsys):
        path = tmp_path / "r.csv"
        ns = TestFit.ns
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["n", "seed", "excess_risk", "se_excess", "status"])
            w.writeheader()
            w.writerows(synthetic_rows(ns, [n ** (-2 / 9) for n in ns]))
        assert cli.main(["fit", "--input", str(path), "--alpha", "1"]) == 0
        assert json.loads(capsys.readouterr().out)["verdict"]["pass"]
        assert cli.main(["fit", "--input", str(path), "--alpha", "1", "--slack", "0.0", "--envelope", "-0.1", "-0.05"]) == 2
        assert cli.main(["fit", "--input", str(tmp_path / "missing.csv"), "--alpha", "1"]) == 1

    def test_dist_check(self, tmp_path):
        out = tmp_path / "d.csv"
        code = cli.main(["dist-check", "--config", str(CONFIGS / "small_distribution.ini"), "--n-mc", "200000",
                         "--n-cdf", "20000", "--output", str(out)])
        assert code == 0
        assert out.read_text().startswith("quantity,t,exact,estimate,se,ok")

    def test_sweep(self, tmp_path):
        cfg = tmp_path / "s.ini"
        cfg.write_text(TINY)
        assert cli.main(["sweep", "--config", str(cfg), "--output", str(tmp_path / "o"), "--quiet"]) == 0
        assert len((tmp_path / "o" / Hn.RESULTS_FILE).read_text().splitlines()) == 13

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[grid]\nseeds = 1\n")
        assert cli.main(["dist-check", "--config", str(cfg)]) == 1
