import json
import math

import numpy as np
import pytest

from mvcert.mmc import PointShared, TruncatedBeta
from mvcert.sim import (
    BOUND_HEADER,
    SWEEP_HEADER,
    BoundsStudyConfig,
    SweepConfig,
    bound_comparison,
    mc_error_prob,
    mmc_sweep,
    rows_to_csv,
    sweep_distribution,
    write_study,
)


class TestMonteCarlo:
    @pytest.mark.parametrize("p,n,exact", [((0.5, 0.3, 0.2), 2, 0.75), ((0.6, 0.4), 3, 0.352)])
    def test_matches_exact(self, p, n, exact):
        est = mc_error_prob(p, n, 200_000, seed=1)
        assert abs(est.estimate - exact) <= 4 * est.stderr
        assert est.stderr == pytest.approx(math.sqrt(exact * (1 - exact) / 200_000), rel=0.05)

    def test_dirac(self):
        assert mc_error_prob([1.0, 0.0], 5, 1000, seed=0).estimate == 0.0

    def test_tie_always_errs(self):
        # with two equal labels and even n, ties and losses together exceed one half
        assert mc_error_prob([0.5, 0.5], 2, 10_000, seed=0).estimate > 0.5

    def test_seeded(self):
        assert mc_error_prob((0.4, 0.35, 0.25), 11, 5000, 3) == mc_error_prob((0.4, 0.35, 0.25), 11, 5000, 3)

    def test_invalid(self):
        with pytest.raises(ValueError):
            mc_error_prob([0.6, 0.4], 0, 10, 0)
        with pytest.raises(ValueError):
            mc_error_prob([0.6, 0.4], 3, 0, 0)


class TestBoundComparison:
    def test_rows(self):
        rows = bound_comparison((0.38, 0.35, 0.27), [10, 250], 2000, seed=4)
        assert [r["n"] for r in rows] == [10, 250]
        assert rows[0]["exact_dp"] is not None and rows[1]["exact_dp"] is None
        for r in rows:
            assert set(BOUND_HEADER) <= set(r)
            assert r["hoeffding"] >= r["chernoff"] or r["hoeffding"] == 1.0

    def test_no_unique_mode(self):
        rows = bound_comparison((0.5, 0.5), [4], 100, seed=0)
        assert rows[0]["hoeffding"] is None and rows[0]["exact_dp"] is not None


class TestSweep:
    @pytest.mark.parametrize("k,delta", [(26, 0.1), (26, 0.0), (2, 0.3), (5, 0.5)])
    def test_family(self, k, delta):
        p = sweep_distribution(k, delta)
        assert p.sum() == pytest.approx(1.0, abs=1e-15)
        assert p[0] - p[1] == pytest.approx(delta, abs=1e-12)
        assert np.all(p[2:] <= p[1] + 1e-15)

    def test_family_invalid(self):
        with pytest.raises(ValueError):
            sweep_distribution(1, 0.1)
        with pytest.raises(ValueError):
            sweep_distribution(3, 1.0)
        with pytest.raises(ValueError):
            sweep_distribution(3, 0.1, tail_fraction=0.9)

    def test_properties(self):
        deltas = (0.1, 0.2, 0.3, 0.5)
        base = SweepConfig(deltas=deltas, trials=500, master_seed=12)
        jeff = mmc_sweep(base)
        shared = mmc_sweep(SweepConfig(deltas=deltas, trials=500, master_seed=12, prior=PointShared()))
        medians = [r["median"] for r in jeff]
        assert all(b <= a for a, b in zip(medians, medians[1:]))
        for a, b in zip(shared, jeff):
            assert a["median"] <= b["median"]
        for r in jeff:
            assert r["trials"] == 500 and 0 <= r["abstain_rate"] <= 1
            assert r["q1"] <= r["median"] <= r["q3"] <= base.budget

    def test_no_margin_mostly_abstains(self):
        rows = mmc_sweep(SweepConfig(k=2, deltas=(0.0,), trials=400, master_seed=1))
        assert rows[0]["abstain_rate"] > 0.85

    def test_all_abstain_reports_no_error_rate(self):
        rows = mmc_sweep(SweepConfig(k=2, deltas=(0.0,), trials=5, budget=2, master_seed=1))
        assert rows[0]["stopped"] == 0 and rows[0]["winner_error_rate"] is None

    def test_config_round_trip(self):
        cfg = SweepConfig(k=5, deltas=[0.2], prior=TruncatedBeta(1.0, 2.0), trials=3, master_seed=2**64 - 1)
        assert SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
        with pytest.raises(ValueError):
            SweepConfig.from_dict({"bogus": 1})
        with pytest.raises(ValueError):
            SweepConfig(master_seed=2**64)


class TestOutput:
    def test_csv_cells(self):
        text = rows_to_csv([{"a": 0.1, "b": None, "c": 3}], ("a", "b", "c"))
        assert text == "a,b,c\n0.1,,3\n"

    @pytest.mark.parametrize("kind", ["bounds", "mmc"])
    def test_byte_identical(self, kind, tmp_path):
        if kind == "bounds":
            cfg = BoundsStudyConfig(n_grid=(5, 40), trials=3000, master_seed=99)
        else:
            cfg = SweepConfig(k=6, deltas=(0.2, 0.4), trials=200, master_seed=99)
        a = write_study(kind, cfg, tmp_path / "a")
        b = write_study(kind, cfg, tmp_path / "b")
        for x, y in zip(a, b):
            assert x.read_bytes() == y.read_bytes()
        meta = json.loads(a[1].read_text())
        assert meta["config"]["master_seed"] == 99 and meta["study"] == kind
        header = a[0].read_text().splitlines()[0].split(",")
        assert tuple(header) == (BOUND_HEADER if kind == "bounds" else SWEEP_HEADER)

    def test_seed_changes_output(self, tmp_path):
        a, _ = write_study("bounds", BoundsStudyConfig(n_grid=(9,), trials=2000, master_seed=1), tmp_path / "a")
        b, _ = write_study("bounds", BoundsStudyConfig(n_grid=(9,), trials=2000, master_seed=2), tmp_path / "b")
        assert a.read_bytes() != b.read_bytes()

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            write_study("other", BoundsStudyConfig(), tmp_path)
