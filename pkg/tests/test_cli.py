import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rkbs_svm.cli import EXIT_INPUT, EXIT_OK, RunConfig, main, read_csv
from rkbs_svm.function_space import RkbsModel, TrainingSet
from rkbs_svm.kernels import SpectralKernel
from rkbs_svm.solver import predict, solve_p2_closed_form

ROOT = Path(__file__).resolve().parents[1]
TOY_X = [-2.0, -1.0, 0.0, 1.0, 2.0]
TOY_Y = [0.5, -0.3, 1.0, 0.2, -0.8]


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def write_rows(path, rows, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        w.writerows(rows)
    return path


def base_config(**changes):
    doc = {"p": 2, "theta": 1.0, "n": 2.0, "loss": "squared", "lambda": 0.1, "seed": 0, "real_mode": True}
    doc.update(changes)
    return doc


@pytest.fixture
def toy(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", base_config())
    data = write_rows(tmp_path / "train.csv", zip(TOY_X, TOY_Y), header=["x", "y"])
    return tmp_path, cfg, data


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown"):
            RunConfig.from_dict(base_config(colour="red"))

    def test_missing_field(self):
        doc = base_config()
        del doc["seed"]
        with pytest.raises(ValueError, match="missing"):
            RunConfig.from_dict(doc)

    @pytest.mark.parametrize("bad", [{"p": 3}, {"theta": -1.0}, {"real_mode": "yes"}, {"loss": "hinge"},
                                     {"lambda": 0.0}, {"solver": {"tolerance": 1}}])
    def test_invalid_values(self, bad):
        with pytest.raises(ValueError):
            RunConfig.from_dict(base_config(**bad))

    def test_shipped_configs_load(self):
        for name in ("default.json", "bench.json"):
            RunConfig.load(ROOT / "configs" / name)

    def test_seed_override(self):
        cfg = RunConfig.from_dict(base_config()).with_seed(7)
        assert cfg.seed == 7 and cfg.solver.seed == 7


class TestCsv:
    def test_header_optional(self, tmp_path):
        a = read_csv(write_rows(tmp_path / "a.csv", [[1, 2, 3]], header=["u", "v", "y"]))
        b = read_csv(write_rows(tmp_path / "b.csv", [[1, 2, 3]]))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], [3.0])

    def test_features_only(self, tmp_path):
        pts, labels = read_csv(write_rows(tmp_path / "a.csv", [[1.0], [2.0]]), dim=1)
        assert labels is None and pts.shape == (2, 1)

    def test_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_csv(path)


class TestTrain:
    def test_toy_matches_ridge(self, toy, capsys):
        tmp, cfg, data = toy
        assert main(["train", "--config", str(cfg), "--data", str(data), "--model", str(tmp / "m.json")]) == EXIT_OK
        out = capsys.readouterr().out
        for word in ("objective", "gradient norm", "iterations", "rkbs norm"):
            assert word in out
        model = RkbsModel.load(tmp / "m.json")
        c = solve_p2_closed_form(TrainingSet(TOY_X, TOY_Y), SpectralKernel(1.0, 2.0), 0.1)
        np.testing.assert_allclose(model.c, c, atol=1e-6)
        assert model.metadata["converged"] is True

    def test_empty_csv(self, toy):
        tmp, cfg, _ = toy
        empty = tmp / "empty.csv"
        empty.write_text("", encoding="utf-8")
        assert main(["train", "--config", str(cfg), "--data", str(empty), "--model", str(tmp / "m.json")]) == EXIT_INPUT

    def test_duplicate_rows(self, toy, capsys):
        tmp, cfg, _ = toy
        dup = write_rows(tmp / "dup.csv", [[0.0, 1.0], [1.0, 2.0], [0.0, 1.0]])
        assert main(["train", "--config", str(cfg), "--data", str(dup), "--model", str(tmp / "m.json")]) == EXIT_INPUT
        assert "pairwise distinct" in capsys.readouterr().err

    def test_corrupted_config(self, toy):
        tmp, _, data = toy
        bad = tmp / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        assert main(["train", "--config", str(bad), "--data", str(data), "--model", str(tmp / "m.json")]) == EXIT_INPUT

    def test_deterministic(self, toy):
        tmp, _, _ = toy
        cfg = write_json(tmp / "p4.json", base_config(p=4))
        rng = np.random.default_rng(0)
        data = write_rows(tmp / "d.csv", zip(np.sort(rng.uniform(-2, 2, 6)), rng.standard_normal(6)))
        for name in ("a.json", "b.json"):
            assert main(["train", "--config", str(cfg), "--data", str(data), "--model", str(tmp / name)]) == EXIT_OK
        assert (tmp / "a.json").read_bytes() == (tmp / "b.json").read_bytes()

    def test_round_trip(self, toy):
        tmp, cfg, data = toy
        main(["train", "--config", str(cfg), "--data", str(data), "--model", str(tmp / "m.json")])
        grid = np.linspace(-3, 3, 11)
        write_rows(tmp / "grid.csv", grid[:, None])
        assert main(["predict", "--model", str(tmp / "m.json"), "--data", str(tmp / "grid.csv"),
                     "--out", str(tmp / "pred.csv")]) == EXIT_OK
        got = np.loadtxt(tmp / "pred.csv", delimiter=",", skiprows=1)
        want = predict(RkbsModel.load(tmp / "m.json"), grid)
        assert np.all(np.isfinite(got))
        np.testing.assert_allclose(got[:, 0] + 1j * got[:, 1], want, atol=1e-12, rtol=0)


class TestPredict:
    def test_own_centers_give_phi(self, toy):
        tmp, cfg, data = toy
        main(["train", "--config", str(cfg), "--data", str(data), "--model", str(tmp / "m.json")])
        write_rows(tmp / "centers.csv", np.array(TOY_X)[:, None])
        main(["predict", "--model", str(tmp / "m.json"), "--data", str(tmp / "centers.csv"), "--out", str(tmp / "p.csv")])
        got = np.loadtxt(tmp / "p.csv", delimiter=",", skiprows=1)
        np.testing.assert_allclose(got[:, 0], np.real(RkbsModel.load(tmp / "m.json").phi()), rtol=1e-13)

    def test_missing_model(self, tmp_path):
        data = write_rows(tmp_path / "x.csv", [[0.0]])
        assert main(["predict", "--model", str(tmp_path / "nope.json"), "--data", str(data),
                     "--out", str(tmp_path / "o.csv")]) == EXIT_INPUT

    def test_labels_for_classifiers(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", base_config(loss="logistic"))
        data = write_rows(tmp_path / "t.csv", [[-1.0, -1], [-0.5, -1], [0.5, 1], [1.0, 1]])
        main(["train", "--config", str(cfg), "--data", str(data), "--model", str(tmp_path / "m.json")])
        write_rows(tmp_path / "q.csv", [[-2.0], [2.0]])
        main(["predict", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "q.csv"),
              "--out", str(tmp_path / "o.csv")])
        rows = list(csv.reader(open(tmp_path / "o.csv", encoding="utf-8")))
        assert rows[0] == ["re", "im", "label"]
        assert [r[2] for r in rows[1:]] == ["-1", "1"]


class TestVerify:
    def test_default_config_passes(self, tmp_path):
        report = tmp_path / "r.json"
        assert main(["verify", "--config", str(ROOT / "configs" / "default.json"), "--out", str(report)]) == EXIT_OK
        sections = json.loads(report.read_text(encoding="utf-8"))
        assert {s["status"] for s in sections.values()} == {"pass"}

    def test_coarse_grid_inconclusive(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", base_config(p=4, verify={"grid_nodes": 8}))
        assert main(["verify", "--config", str(cfg)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "inconclusive" in out and "warning" in out

    def test_corrupted(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text("[1, 2", encoding="utf-8")
        assert main(["verify", "--config", str(bad)]) == EXIT_INPUT


class TestBench:
    def test_zero_training_points(self, tmp_path):
        cfg = write_json(tmp_path / "b.json", json.loads((ROOT / "configs" / "bench.json").read_text()) | {"bench": {"n_train": 0}})
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == EXIT_INPUT

    def test_degree_too_small_for_p4(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "b.json", base_config(n=3.0))
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == EXIT_INPUT
        assert "n > 3d/2" in capsys.readouterr().err

    def test_module_entry_point(self, tmp_path):
        out = tmp_path / "r.json"
        proc = subprocess.run(
            [sys.executable, "-m", "rkbs_svm", "bench", "--config", str(ROOT / "configs" / "bench.json"),
             "--out", str(out), "--seed-override", "1"],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["seed"] == 1
        for p in ("p=2", "p=4"):
            assert 0 <= report["results"][p]["test_accuracy"] <= 1
