import json
import subprocess
import sys

import numpy as np
import pytest

from nnshapley.cli import main


def run_cli(args):
    return main(args)


def write_csv(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def csv_pair(tmp_path):
    train = write_csv(
        tmp_path,
        "train.csv",
        "0.9,0.1,0\n0.8,0.3,0\n0.1,0.9,1\n0.2,0.8,1\n0.5,0.5,0\n0.4,0.7,1\n",
    )
    val = write_csv(tmp_path, "val.csv", "1.0,0.0,0\n0.0,1.0,1\n")
    return train, val


class TestValueCommand:
    def test_tknn_scores_json(self, csv_pair, tmp_path):
        train, val = csv_pair
        out = str(tmp_path / "scores.json")
        code = run_cli(
            ["value", "--train", train, "--val", val, "--method", "tknn",
             "--tau", "-0.5", "--output", out]
        )
        assert code == 0
        payload = json.loads((tmp_path / "scores.json").read_text())
        assert len(payload["result"]["scores"]) == 6
        assert payload["result"]["method"]["name"] == "tknn-shapley"
        assert payload["version"]
        assert payload["config"]["method"] == "tknn"

    def test_knn_routing(self, csv_pair, tmp_path):
        train, val = csv_pair
        out = str(tmp_path / "scores.json")
        assert run_cli(["value", "--train", train, "--val", val, "--method", "knn",
                        "--k", "5", "--output", out]) == 0
        payload = json.loads((tmp_path / "scores.json").read_text())
        assert payload["result"]["method"]["name"] == "knn-shapley"
        assert payload["result"]["method"]["k"] == 5

    def test_missing_label_column_exits_3(self, csv_pair, tmp_path, capsys):
        train, val = csv_pair
        code = run_cli(
            ["value", "--train", train, "--val", val, "--label-column", "target",
             "--output", str(tmp_path / "x.json")]
        )
        assert code == 3
        assert "target" in capsys.readouterr().err

    def test_synthetic_shorthand(self, tmp_path):
        out = str(tmp_path / "s.json")
        assert run_cli(["value", "--synthetic", "n=50,d=4", "--synthetic-val", "n=10",
                        "--method", "tknn", "--output", out]) == 0
        payload = json.loads((tmp_path / "s.json").read_text())
        assert len(payload["result"]["scores"]) == 50
        assert payload["result"]["validation_size"] == 10

    def test_byte_for_byte_reproducibility(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        args = ["value", "--synthetic", "n=40,d=3", "--method", "knn-old",
                "--seed", "7"]
        assert run_cli(args + ["--output", str(a)]) == 0
        assert run_cli(args + ["--output", str(b)]) == 0
        # identical apart from the embedded output path
        pa = json.loads(a.read_text())
        pb = json.loads(b.read_text())
        pa["config"].pop("output")
        pb["config"].pop("output")
        assert pa == pb

    def test_train_and_synthetic_conflict_exits_2(self, csv_pair, tmp_path):
        train, _ = csv_pair
        code = run_cli(["value", "--train", train, "--synthetic", "n=5,d=2",
                        "--output", str(tmp_path / "x.json")])
        assert code == 2

    def test_invalid_k_never_computes(self, tmp_path):
        out = tmp_path / "x.json"
        code = run_cli(["value", "--synthetic", "n=20,d=2", "--k", "0",
                        "--method", "knn", "--output", str(out)])
        assert code == 2
        assert not out.exists()


class TestDpValueCommand:
    def test_epsilon_budget_respected(self, tmp_path):
        out = str(tmp_path / "dp.json")
        code = run_cli(
            ["dp-value", "--synthetic", "n=100,d=4", "--synthetic-val", "n=8",
             "--method", "dp-tknn", "--epsilon", "2.0", "--delta", "1e-4",
             "--q", "0.05", "--seed", "3", "--output", out]
        )
        assert code == 0
        payload = json.loads((tmp_path / "dp.json").read_text())
        report = json.loads((tmp_path / "dp.json.account.json").read_text())["report"]
        assert report["epsilon"] <= 2.0
        assert report["mechanisms"] == 8
        manifest = payload["result"]["method"]["dp"]
        assert manifest["composed_epsilon"] == report["epsilon"]
        assert manifest["draws"] == 3 * 8
        assert set(report) == {
            "mechanisms", "sigma", "q", "delta", "epsilon", "grid_step", "truncated_mass",
        }

    def test_baseline_switch(self, tmp_path):
        out = str(tmp_path / "dpknn.json")
        code = run_cli(
            ["dp-value", "--synthetic", "n=60,d=3", "--synthetic-val", "n=4",
             "--baseline", "dp-knn", "--sigma", "0.5", "--delta", "1e-4",
             "--seed", "1", "--output", out]
        )
        assert code == 0
        payload = json.loads((tmp_path / "dpknn.json").read_text())
        assert payload["result"]["method"]["name"] == "dp-knn-shapley-old"

    def test_seeded_reproducibility(self, tmp_path):
        args = ["dp-value", "--synthetic", "n=50,d=3", "--synthetic-val", "n=4",
                "--method", "dp-tknn", "--sigma", "2.0", "--delta", "1e-4",
                "--q", "0.5", "--seed", "11"]
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert run_cli(args + ["--output", str(a)]) == 0
        assert run_cli(args + ["--output", str(b)]) == 0
        sa = json.loads(a.read_text())["result"]["scores"]
        sb = json.loads(b.read_text())["result"]["scores"]
        assert sa == sb

    def test_requires_exactly_one_of_epsilon_sigma(self, tmp_path):
        code = run_cli(["dp-value", "--synthetic", "n=20,d=2", "--method", "dp-tknn",
                        "--output", str(tmp_path / "x.json")])
        assert code == 2


class TestDetectCommand:
    def test_flip_detection_report(self, tmp_path):
        out = str(tmp_path / "det.json")
        code = run_cli(
            ["detect", "--synthetic", "n=300,d=6", "--synthetic-val", "n=40",
             "--corruption", "flip", "--rate", "0.1", "--method", "tknn",
             "--seed", "5", "--output", out]
        )
        assert code == 0
        payload = json.loads((tmp_path / "det.json").read_text())
        assert 0.0 <= payload["report"]["auroc"] <= 1.0
        assert payload["report"]["corruption"] == "label-flip"
        assert len(payload["corruption_record"]["indices"]) == 30
        assert "wall_time" not in payload["report"]

    def test_noise_detection_runs(self, tmp_path):
        out = str(tmp_path / "det.json")
        code = run_cli(
            ["detect", "--synthetic", "n=200,d=5", "--corruption", "noise",
             "--rate", "0.1", "--method", "knn", "--seed", "2", "--output", out]
        )
        assert code == 0

    def test_reproducible_bytes(self, tmp_path):
        args = ["detect", "--synthetic", "n=150,d=4", "--corruption", "flip",
                "--rate", "0.2", "--method", "tknn", "--seed", "9"]
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert run_cli(args + ["--output", str(a)]) == 0
        assert run_cli(args + ["--output", str(b)]) == 0
        pa = json.loads(a.read_text())
        pb = json.loads(b.read_text())
        pa["config"].pop("output")
        pb["config"].pop("output")
        assert pa == pb


class TestAttackCommand:
    def test_small_attack_report(self, tmp_path):
        out = str(tmp_path / "atk.json")
        code = run_cli(
            ["attack", "--synthetic", "d=4", "--members", "8", "--nonmembers", "8",
             "--shadow-pool", "40", "--shadow-count", "4", "--n-val", "6",
             "--method", "knn", "--k", "1", "--seed", "3", "--output", out]
        )
        assert code == 0
        payload = json.loads((tmp_path / "atk.json").read_text())
        assert len(payload["report"]["lambda"]) == 16
        assert 0.0 <= payload["report"]["auroc"] <= 1.0
        assert payload["report"]["is_member"].count(True) == 8


class TestBenchCommand:
    def test_csv_schema(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = run_cli(["bench", "--ns", "100,200", "--d", "3", "--nval", "5",
                        "--methods", "tknn,knn", "--repeats", "3",
                        "--output", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "n,method,median_seconds,repeats"
        assert len(lines) == 5

    def test_scientific_notation_sizes(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = run_cli(["bench", "--ns", "1e2", "--d", "2", "--nval", "3",
                        "--methods", "tknn", "--repeats", "3", "--output", str(out)])
        assert code == 0
        assert "100,tknn" in out.read_text()


class TestAccountCommand:
    def test_report(self, tmp_path):
        out = tmp_path / "acc.json"
        code = run_cli(["account", "--mechanisms", "20", "--sigma", "5.32",
                        "--q", "0.05", "--delta", "1e-4", "--output", str(out)])
        assert code == 0
        report = json.loads(out.read_text())["report"]
        assert report["mechanisms"] == 20
        assert report["epsilon"] > 0.0
        assert report["truncated_mass"] < 1e-6

    def test_numerical_error_exit_code(self, tmp_path):
        # delta below the truncation floor cannot be certified: exit 4.
        code = run_cli(["account", "--mechanisms", "2", "--sigma", "3.0",
                        "--delta", "1e-12", "--truncation-tail", "1e-6",
                        "--output", str(tmp_path / "x.json")])
        assert code == 4


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "v.json"
        proc = subprocess.run(
            [sys.executable, "-m", "nnshapley.cli", "value", "--synthetic", "n=20,d=2",
             "--method", "tknn", "--output", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert out.exists()

    def test_usage_error_is_exit_2(self):
        proc = subprocess.run(
            [sys.executable, "-m", "nnshapley.cli", "value"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 2
