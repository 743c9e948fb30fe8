import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchreg.sampler import SamplerConfig
from sketchreg.simgen import (
    Method,
    Scenario,
    ScenarioSpec,
    StudyConfig,
    compare_on_data,
    generate_dataset,
    generate_design,
    generate_response,
    generate_truth,
    load_study_config,
    run_study,
)

FAST = SamplerConfig(n_iter=300, n_burn=100, seed=0)


def spec(**kw):
    base = dict(n=100, p=10, s=2, scenario=Scenario.INDEPENDENT, seed=1)
    base.update(kw)
    return ScenarioSpec(**base)


class TestSpecs:
    @pytest.mark.parametrize(
        "kw", [dict(s=11), dict(signal_low=3.0, signal_high=1.5), dict(sigma2_true=0.0), dict(n=0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            spec(**kw)

    def test_parse(self):
        assert Scenario.parse(2) is Scenario.COMPOUND
        assert Scenario.parse("independent") is Scenario.INDEPENDENT
        assert Method.parse("chs") is Method.CHS
        with pytest.raises(ValueError):
            Method.parse("lasso")


class TestDesign:
    @pytest.mark.parametrize("scenario,target", [(Scenario.COMPOUND, 0.5), (Scenario.INDEPENDENT, 0.0)])
    def test_correlation_and_variance(self, rng, scenario, target):
        x = generate_design(spec(n=20_000, p=2, s=0, scenario=scenario), rng)
        assert np.corrcoef(x.T)[0, 1] == pytest.approx(target, abs=0.02)
        np.testing.assert_allclose(x.var(axis=0), 1.0, atol=0.03)

    @pytest.mark.slow
    def test_compound_covariance(self, rng):
        p = 50
        x = generate_design(spec(n=50_000, p=p, s=0, scenario=Scenario.COMPOUND), rng)
        target = 0.5 * np.eye(p) + 0.5
        assert np.max(np.abs(np.corrcoef(x.T) - target)) < 0.03


class TestTruth:
    def test_empty_support(self, rng):
        assert not np.any(generate_truth(spec(s=0), rng))

    def test_full_support(self, rng):
        b = generate_truth(spec(p=40, s=40), rng)
        assert np.all(b != 0)
        assert np.all((np.abs(b) >= 1.5) & (np.abs(b) <= 3.0))

    def test_support_size_over_seeds(self):
        for seed in range(1000):
            r = np.random.default_rng(seed)
            p = int(r.integers(1, 60))
            s = int(r.integers(0, p + 1))
            assert np.count_nonzero(generate_truth(spec(p=p, s=s), r)) == s

    def test_signs_balanced(self, rng):
        b = generate_truth(spec(n=10, p=20_000, s=20_000), rng)
        assert np.mean(b > 0) == pytest.approx(0.5, abs=0.02)


class TestResponse:
    def test_noiseless(self, rng):
        x = rng.standard_normal((50, 4))
        b = np.array([1.0, 0, -2, 0.5])
        np.testing.assert_array_equal(generate_response(x, b, 0.0, rng), x @ b)

    def test_noise_variance(self, rng):
        x = rng.standard_normal((20_000, 3))
        b = np.array([2.0, 0.0, -1.0])
        y = generate_response(x, b, 1.5, rng)
        assert np.var(y - x @ b) == pytest.approx(1.5, rel=0.05)

    def test_null_model(self, rng):
        y = generate_response(rng.standard_normal((20_000, 3)), np.zeros(3), 1.5, rng)
        assert abs(y.mean()) < 4 * np.sqrt(1.5 / 20_000)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            generate_response(np.zeros((5, 3)), np.zeros(2), 1.0, rng)


class TestDataset:
    def test_deterministic(self):
        a = generate_dataset(spec(), 3)
        b = generate_dataset(spec(), 3)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_replications_differ(self):
        assert not np.array_equal(generate_dataset(spec(), 0)[0], generate_dataset(spec(), 1)[0])

    def test_seed_isolation(self):
        # the dataset is independent of the sketch grid, methods and sampler
        s = spec(n=120, p=15, s=2)
        keep = StudyConfig(s, m_grid=(20,), replications=1, sampler=FAST, keep_chains=True)
        other = StudyConfig(s, m_grid=(30, 40), replications=1,
                            sampler=SamplerConfig(n_iter=200, n_burn=50, seed=9))
        x0, y0, b0 = generate_dataset(s, 0)
        r1, r2 = run_study(keep), run_study(other)
        for r in (r1, r2):
            assert all(c["s"] == 2 for c in r.cells)
        x1, y1, b1 = generate_dataset(s, 0)
        np.testing.assert_array_equal(x0, x1)
        np.testing.assert_array_equal(y0, y1)
        np.testing.assert_array_equal(b0, b1)
        # different m values get different sketch seeds and hence different chains
        assert r2.column("CHS", 30, "mse")[0] != r2.column("CHS", 40, "mse")[0]


class TestStudy:
    def test_bookkeeping(self):
        cfg = StudyConfig(spec(n=300, p=20, s=2), m_grid=(100,), replications=2, sampler=FAST)
        rep = run_study(cfg)
        assert len(rep.per_cell) == 2
        (agg,) = rep.aggregates()
        assert agg["n_ok"] == 2
        assert agg["mse_mean"] == pytest.approx(np.mean(rep.column("CHS", 100, "mse")))
        assert agg["accuracy_mean"] is None

    def test_cell_count(self):
        cfg = StudyConfig(spec(n=150, p=12), m_grid=(30, 60), replications=2, sampler=FAST,
                          comparators=("CHS", "FullHS", "SubsampleHS"))
        rep = run_study(cfg)
        assert len(rep.cells) == 3 * 2 * 2
        assert all(c["status"] == "ok" for c in rep.cells)
        acc = rep.column("CHS", 30, "accuracy")
        assert np.all((acc >= 0) & (acc <= 1))
        # the full-data fit is shared by every m of a replication
        np.testing.assert_array_equal(rep.column("FullHS", 30, "mse"), rep.column("FullHS", 60, "mse"))

    def test_reproducible_bytes(self):
        cfg = StudyConfig(spec(n=150, p=12), m_grid=(30, 60), replications=2, sampler=FAST,
                          comparators=("CHS", "FullHS"))
        a, b = run_study(cfg), run_study(cfg)
        assert a.to_csv(timings=False) == b.to_csv(timings=False)
        assert a.to_json(timings=False) == b.to_json(timings=False)

    def test_workers_match_serial(self):
        base = dict(scenario=spec(n=150, p=12), m_grid=(30,), replications=3, sampler=FAST)
        a = run_study(StudyConfig(**base, workers=1))
        b = run_study(StudyConfig(**base, workers=2))
        assert a.to_csv(timings=False) == b.to_csv(timings=False)

    def test_infeasible_full_fit_skipped(self):
        cfg = StudyConfig(spec(n=150, p=12), m_grid=(30,), replications=1, sampler=FAST,
                          comparators=("CHS", "FullHS"), full_max_cost=1.0)
        rep = run_study(cfg)
        full = [c for c in rep.cells if c["method"] == "FullHS"]
        assert [c["status"] for c in full] == ["skipped"]
        assert full[0]["mse"] is None
        chs = [c for c in rep.cells if c["method"] == "CHS"][0]
        assert chs["status"] == "ok" and chs["accuracy"] is None

    def test_m_grid_validation(self):
        with pytest.raises(ValueError):
            StudyConfig(spec(n=100), m_grid=(100,))
        with pytest.raises(ValueError):
            StudyConfig(spec(n=100), m_grid=(10,), replications=0)

    def test_compare_without_truth(self, rng):
        x = rng.standard_normal((80, 5))
        y = x[:, 0] + rng.standard_normal(80)
        cells, _ = compare_on_data(x, y, None, (20,), ("CHS", "FullHS"), FAST, master_seed=4)
        chs = [c for c in cells if c["method"] == "CHS"][0]
        assert chs["mse"] is None and 0 <= chs["accuracy"] <= 1

    def test_csv_layout(self):
        cfg = StudyConfig(spec(n=150, p=12), m_grid=(30,), replications=1, sampler=FAST)
        text = run_study(cfg).to_csv(timings=False)
        header = text.splitlines()[0].split(",")
        assert header[:6] == ["method", "m", "s", "scenario", "replication", "status"]
        assert "wall_seconds" not in header


class TestConfigFile:
    def test_load(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text(
            "[scenario]\nn = 200\np = 20\ns = 3\nscenario = 2\nseed = 5\n"
            "[sampler]\nn_iter = 500\nn_burn = 100\n"
            "[study]\nm_grid = [50, 100]\nreplications = 2\ncomparators = [\"CHS\", \"FullHS\"]\n"
        )
        cfg = load_study_config(f)
        assert cfg.scenario.scenario is Scenario.COMPOUND
        assert cfg.m_grid == (50, 100)
        assert cfg.comparators == (Method.CHS, Method.FULL_HS)
        assert load_study_config(f, seed=9).scenario.seed == 9
        json.dumps(cfg.to_dict())

    def test_unknown_keys(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text("[scenario]\nn = 200\np = 20\ns = 3\nbogus = 1\n")
        with pytest.raises(ValueError, match="bogus"):
            load_study_config(f)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40), p=st.integers(1, 30), data=st.data())
def test_support_exactness_property(n, p, data):
    s = data.draw(st.integers(0, p))
    sc = data.draw(st.sampled_from(list(Scenario)))
    x, y, b = generate_dataset(ScenarioSpec(n=n, p=p, s=s, scenario=sc, seed=data.draw(st.integers(0, 2**63))))
    assert x.shape == (n, p) and y.shape == (n,)
    assert np.count_nonzero(b) == s
