import csv
import io
import json
import math

import jsonschema
import numpy as np
import pytest

from butterfly import harness as hz
from butterfly.errors import ButterflyError

SMALL = dict(family="radix", r=2, grid=[4, 5, 6], replicates=200, horizon=3,
             functionals=["indicator:1", "identity"], seed=5)


@pytest.fixture(scope="module")
def small_result():
    return hz.run_clt_experiment(hz.ExperimentConfig(**SMALL))


class TestConfig:
    def test_defaults(self):
        cfg = hz.ExperimentConfig(family="multinomial", grid=[16])
        assert cfg.replicates == 1000 and cfg.rel_tol == 0.10
        assert cfg.schedule(16).n_particles == 16

    def test_load_toml_and_json(self, tmp_path):
        (tmp_path / "c.toml").write_text('family = "mixed"\nr = 2\ngrid = [4, 8]\nseed = 3\n')
        (tmp_path / "c.json").write_text(json.dumps({"family": "mixed", "r": 2, "grid": [4, 8],
                                                     "seed": 3}))
        a = hz.load_config(tmp_path / "c.toml", env={})
        b = hz.load_config(tmp_path / "c.json", env={})
        assert a == b and a.grid == (4, 8)

    def test_seed_override(self, tmp_path):
        (tmp_path / "c.toml").write_text('family = "radix"\nr = 2\ngrid = [3]\nseed = 3\n')
        assert hz.load_config(tmp_path / "c.toml", env={"BUTTERFLY_SEED": "11"}).seed == 11

    @pytest.mark.parametrize("kwargs", [
        dict(family="systematic", grid=[4]),
        dict(family="radix", grid=[4]),
        dict(family="radix", r=2, grid=[]),
        dict(family="radix", r=2, grid=[3], replicates=1),
        dict(family="radix", r=2, grid=[3], horizon=2, eval_step=3),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ButterflyError):
            hz.ExperimentConfig(**kwargs)

    def test_shipped_configs_load(self):
        for name in ("clt_bpf", "clt_mixed", "clt_radix", "lln_bpf", "lln_mixed", "lln_radix",
                     "moments_radix"):
            cfg = hz.load_config(hz.config_path(name), env={})
            assert cfg.work() <= hz.BUDGET
        with pytest.raises(ButterflyError):
            hz.config_path("nope")

    def test_budget(self):
        cfg = hz.ExperimentConfig(family="radix", r=2, grid=[20], replicates=1000)
        with pytest.raises(ButterflyError):
            hz.run_clt_experiment(cfg)

    def test_models(self):
        assert hz.build_model({"zoo": "binary_symmetric", "p": 0.3}).trans[0, 1] == 0.3
        assert hz.build_model({"zoo": "random", "n_states": 3}).n_states == 3
        inline = {"pi0": [1, 0], "trans": [[1, 0], [0, 1]], "emission": [[1], [1]]}
        assert hz.build_model(inline).n_states == 2
        with pytest.raises(ButterflyError):
            hz.build_model({"zoo": "unknown"})

    def test_observation_file(self, tmp_path):
        (tmp_path / "o.json").write_text('{"observations": [1, 0, 1, 1]}')
        cfg = hz.ExperimentConfig(family="radix", r=2, grid=[3], horizon=2,
                                  obs_path=str(tmp_path / "o.json"))
        assert hz.observations(cfg, hz.build_model(cfg.model)) == [1, 0, 1]
        short = hz.ExperimentConfig(family="radix", r=2, grid=[3], horizon=5,
                                    obs_path=str(tmp_path / "o.json"))
        with pytest.raises(ButterflyError):
            hz.observations(short, hz.build_model(cfg.model))


class TestHelpers:
    def test_parse_phi(self):
        np.testing.assert_array_equal(hz.parse_phi("indicator:2", 3), [0, 1, 0])
        np.testing.assert_array_equal(hz.parse_phi("identity", 3), [0, 1, 2])
        np.testing.assert_array_equal(hz.parse_phi("constant:2.5", 2), [2.5, 2.5])
        np.testing.assert_array_equal(hz.parse_phi("values:1,4", 2), [1, 4])
        for bad in ("indicator:0", "indicator:4", "values:1,2", "cosine"):
            with pytest.raises(ButterflyError):
                hz.parse_phi(bad, 3)

    def test_scale_factor(self):
        assert hz.scale_factor("radix", 1024, 2, "filt", 0) == pytest.approx(math.sqrt(102.4))
        assert hz.scale_factor("radix", 1024, 2, "pred", 1) == pytest.approx(math.sqrt(102.4))
        assert hz.scale_factor("radix", 1024, 2, "pred", 0) == 32.0
        assert hz.scale_factor("mixed", 1024, 2, "filt", 3) == 32.0
        assert hz.scale_factor("multinomial", 81, None, "filt", 3) == 9.0

    def test_variance_with_se(self):
        x = np.random.default_rng(0).normal(0, 2, 100_000)
        v, se = hz.variance_with_se(x)
        assert v == pytest.approx(np.var(x))
        # Gaussian: Var(s^2) ~ 2 sigma^4 / R
        assert se == pytest.approx(math.sqrt(2 * 16 / 100_000), rel=0.05)

    def test_compare(self):
        assert hz.compare(1.05, 0.01, 1.0, 0.10) == "pass"
        assert hz.compare(1.2, 0.01, 1.0, 0.10) == "fail"
        assert hz.compare(1.2, 0.1, 1.0, 0.10) == "pass"
        assert hz.compare(0.0, 0.0, 0.0, 0.10) == "skip"

    def test_point_seeds_differ(self):
        assert len({hz.point_seed(1, x) for x in range(50)}) == 50
        assert hz.point_seed(1, 8) == hz.point_seed(1, 8)

    def test_effective_size(self):
        assert hz.effective_size("radix", 4096, 2) == pytest.approx(4096 / 12)
        assert hz.effective_size("mixed", 4096, 2) == 4096


class TestClt:
    def test_row_count(self, small_result):
        assert len(small_result.rows) == 3 * 4 * 2 * 2
        assert small_result.errors[5].shape == (2, 200, 4, 2)

    def test_csv(self, small_result):
        text = hz.clt_csv_text(small_result)
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == hz.CLT_COLUMNS
        assert len(rows) == 1 + 48
        assert {r[-1] for r in rows[1:]} <= {"pass", "fail", "skip"}

    def test_byte_identical_rerun(self, small_result):
        again = hz.run_clt_experiment(hz.ExperimentConfig(**SMALL, workers=3))
        assert hz.clt_csv_text(again) == hz.clt_csv_text(small_result)

    def test_seed_matters(self, small_result):
        other = hz.run_clt_experiment(hz.ExperimentConfig(**{**SMALL, "seed": 6}))
        assert hz.clt_csv_text(other) != hz.clt_csv_text(small_result)

    def test_lookup(self, small_result):
        row = small_result.row(6, 2, "identity", "filt")
        assert row.N == 64 and row.scale == pytest.approx(math.sqrt(64 / 6))
        with pytest.raises(KeyError):
            small_result.row(7, 2, "identity", "filt")

    def test_summary_validates(self, small_result, tmp_path):
        info = hz.emit_results(small_result, tmp_path / "out.csv", tmp_path / "out.json")
        schema = json.loads(hz.SCHEMA_PATH.read_text())
        written = json.loads((tmp_path / "out.json").read_text())
        jsonschema.validate(written, schema)
        assert sum(written["counts"].values()) == 48
        assert written["passed"] == info["passed"] == small_result.passed
        assert (tmp_path / "out.csv").read_text() == hz.clt_csv_text(small_result)

    def test_scaling_needs_radix_grid(self):
        res = hz.run_clt_experiment(hz.ExperimentConfig(family="multinomial", grid=[8],
                                                        replicates=10, horizon=1))
        with pytest.raises(ButterflyError):
            hz.scaling_discrimination(res, 1)

    def test_scaling_report_shape(self, small_result):
        rep = hz.scaling_discrimination(small_result, 2)
        assert rep.grid == (4, 5, 6) and len(rep.root_n) == 3
        np.testing.assert_allclose(np.array(rep.root_n) / np.array(rep.root_n_log), [4, 5, 6])


class TestOtherExperiments:
    def test_lln(self):
        cfg = hz.ExperimentConfig(family="multinomial", grid=[64, 256, 1024], replicates=300,
                                  horizon=3)
        rep = hz.run_lln_experiment(cfg)
        assert rep.rmse.shape == (3, 4, 1) and rep.sizes == (64, 256, 1024)
        assert -0.7 < rep.slopes[3, 0] < -0.3
        assert len(rep.csv_text().splitlines()) == 1 + 3 * 4

    def test_moments(self):
        cfg = hz.ExperimentConfig(family="radix", r=2, grid=[4, 5, 6, 7], replicates=200, horizon=3)
        rep = hz.run_moment_decay(cfg, d=2)
        assert rep.normalized.shape == (4, 4, 1)
        assert np.all(rep.normalized > 0)
        assert len(rep.csv_text().splitlines()) == 1 + 4 * 4
        with pytest.raises(ButterflyError):
            hz.run_moment_decay(hz.ExperimentConfig(family="multinomial", grid=[8]), d=1)

    def test_bias(self):
        cfg = hz.ExperimentConfig(family="mixed", r=2, grid=[8, 32], replicates=2000,
                                  functionals=["indicator:1", "indicator:2"])
        rows = hz.run_bias_experiment(cfg)
        assert len(rows) == 4
        assert all(r.passed for r in rows)
