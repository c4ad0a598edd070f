import csv
import io
import json

import numpy as np
import pytest

from butterfly.cli import main


def run(*args):
    out = io.StringIO()
    code = main(list(args), out=out)
    return code, out.getvalue()


@pytest.fixture
def model_files(tmp_path):
    (tmp_path / "m.toml").write_text('pi0 = [0.5, 0.5]\ntrans = [[0.9, 0.1], [0.1, 0.9]]\n'
                                     'emission = [[0.8, 0.2], [0.2, 0.8]]\n')
    (tmp_path / "o.json").write_text('{"observations": [0, 1, 1, 0]}')
    return str(tmp_path / "m.toml"), str(tmp_path / "o.json")


class TestStructure:
    def test_verify(self):
        code, text = run("verify", "--family", "radix", "--r", "2", "--m", "3", "--exact")
        out = json.loads(text)
        assert code == 0 and out["N"] == 8 and out["unique_paths"] is True

    def test_row_is_one_based(self):
        _, text = run("row", "--family", "radix", "--r", "2", "--m", "3", "--stage", "3",
                      "--index", "5", "--exact")
        assert json.loads(text)["entries"] == [[1, "1/2"], [5, "1/2"]]

    def test_sets(self):
        _, text = run("sets", "--family", "radix", "--r", "2", "--m", "3", "--index", "5")
        out = json.loads(text)
        assert out["collision_start"] == {"1": [6], "2": [7, 8], "3": [1, 2, 3, 4]}
        assert out["path_count"]["0"] == 8

    def test_stats(self):
        _, text = run("stats", "--family", "multinomial", "--n", "5")
        assert json.loads(text) == {"incoming_per_vertex": {"1": 5}, "total_edges": 25}

    def test_partition(self):
        _, text = run("partition", "--family", "mixed", "--r", "2", "--c", "2", "--d", "2")
        assert json.loads(text)["blocks"] == [[1, 3], [2, 4]]

    def test_errors_exit_2(self, capsys):
        code, _ = run("row", "--family", "radix", "--r", "2", "--m", "2", "--stage", "3", "--index", "1")
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestResampling:
    def test_bias_exact(self):
        code, text = run("bias", "--family", "radix", "--r", "2", "--m", "2", "--weights", "1,2,3,4",
                         "--exact")
        out = json.loads(text)
        assert code == 0 and out["lhs"] == out["rhs"] == 2.0

    def test_bias_monte_carlo(self):
        code, text = run("bias", "--family", "mixed", "--r", "2", "--c", "4", "--phi", "indicator:3",
                         "--replicates", "5000")
        out = json.loads(text)
        assert code == 0 and out["rhs"] == pytest.approx(3 / 36)

    def test_weight_count_checked(self):
        code, _ = run("bias", "--family", "radix", "--r", "2", "--m", "2", "--weights", "1,2")
        assert code == 2

    def test_resample_once(self):
        _, text = run("resample-once", "--family", "radix", "--r", "2", "--m", "2", "--seed", "1")
        out = json.loads(text)
        assert out["V"][-1] == [2.5] * 4
        assert all(1 <= j <= 4 for j in out["origins"][-1])


class TestModels:
    def test_exact_filter(self, model_files):
        _, text = run("exact-filter", "--model", model_files[0], "--obs", model_files[1])
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 8
        assert rows[0]["state"] == "1" and float(rows[0]["filter"]) == pytest.approx(0.8)

    def test_variance(self, model_files):
        _, text = run("variance", "--model", model_files[0], "--obs", model_files[1],
                      "--phi", "indicator:2", "--flavor", "radix")
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 4 and {r["flavor"] for r in rows} == {"radix"}
        # (1 - 1/2) * 0.8 * 0.2 at the first filter
        assert float(rows[0]["sigma_filt"]) == pytest.approx(0.08)

    def test_filter(self, model_files, tmp_path):
        npy = tmp_path / "p.npy"
        _, text = run("filter", "--model", model_files[0], "--obs", model_files[1], "--family", "radix",
                      "--r", "2", "--m", "6", "--phi", "indicator:1", "--phi", "identity",
                      "--keep-particles", str(npy))
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 8
        assert np.load(npy).shape == (4, 2, 64)


class TestExperiments:
    def test_clt(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('family = "radix"\nr = 2\ngrid = [4, 5]\nreplicates = 100\nhorizon = 2\n')
        code, text = run("clt", "--config", str(cfg), "--csv", str(tmp_path / "a.csv"),
                         "--json", str(tmp_path / "a.json"))
        summary = json.loads((tmp_path / "a.json").read_text())
        assert code == (0 if summary["passed"] else 1)
        assert json.loads(text)["counts"] == summary["counts"]
        code2, _ = run("clt", "--config", str(cfg), "--csv", str(tmp_path / "b.csv"), "--workers", "2")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_budget_and_force(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"family": "radix", "r": 2, "grid": [20], "replicates": 1000}))
        assert run("clt", "--config", str(cfg))[0] == 2

    def test_lln_and_moments(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('family = "radix"\nr = 2\ngrid = [4, 5, 6]\nreplicates = 100\nhorizon = 3\n')
        code, text = run("lln", "--config", str(cfg))
        assert code in (0, 1) and text.startswith("family,r,m_or_c,N,n,functional,rmse")
        code, text = run("moments", "--config", str(cfg), "--d", "2")
        assert code in (0, 1) and text.startswith("family,r,m_or_c,N,d,p,n,functional")
