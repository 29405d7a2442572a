import json
import subprocess
import sys

import pytest

from ambical.calibrators import load_model
from ambical.cli import main
from ambical.harness.io import save_dataset
from ambical.harness.synthetic import temperature_dataset

SUBCOMMANDS = ("fit", "eval", "bench", "ablate", "simulate", "toy", "check-theory")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_dataset(temperature_dataset(n=800, K=4, m=5, seed=2), root / "data.jsonl")
    cfg = {"methods": ["uncal", "ts", "slts", "mcts", "vs"], "mc_S": 10, "seeds": [1, 2], "dataset": "data.jsonl"}
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestParser:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_help(self, cmd, capsys):
        assert main([cmd, "--help"]) == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        assert _error(capsys)["error"] == "usage_error"

    def test_missing_required(self, capsys):
        assert main(["fit", "--method", "ts"]) == 2

    def test_console_script_module(self):
        out = subprocess.run([sys.executable, "-m", "ambical", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.startswith("ambical ")


class TestRuntimeErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert main(["fit", "--dataset", str(tmp_path / "nope.jsonl"), "--method", "ts", "--out", str(tmp_path / "m.json")]) == 1
        assert _error(capsys)["error"] == "io_error"

    def test_bad_dataset(self, tmp_path, capsys):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"version": 1, "K": 2}\n{"id": "r1", "logits": [0.0], "pi": [1, 0]}\n')
        assert main(["fit", "--dataset", str(p), "--method", "ts", "--out", str(tmp_path / "m.json")]) == 1
        err = _error(capsys)
        assert "r1" in err["message"]

    def test_bad_thread_env(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("AMBICAL_THREADS", "many")
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path)]) == 1
        assert "AMBICAL_THREADS" in _error(capsys)["message"]


class TestFitEval:
    def test_mcts_defaults_to_one_sample(self, workspace, tmp_path):
        out = tmp_path / "mcts.json"
        assert main(["fit", "--dataset", str(workspace / "data.jsonl"), "--method", "mcts", "--out", str(out)]) == 0
        model = load_model(out)
        assert model.kind == "temperature"
        assert model.diagnostics["S"] == 1

    def test_fit_then_eval(self, workspace, tmp_path, capsys):
        model = tmp_path / "slts.json"
        assert main(["fit", "--dataset", str(workspace / "data.jsonl"), "--method", "ts", "--target", "soft", "--out", str(model)]) == 0
        assert main(["eval", "--dataset", str(workspace / "data.jsonl"), "--model", str(model), "--out-dir", str(tmp_path), "--mc-s", "10"]) == 0
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert doc["fitted_on"] == "soft"
        assert doc["metrics"]["mc_S"] == 10


class TestBench:
    def test_deterministic_across_threads(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(a), "--threads", "1"]) == 0
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(b), "--threads", "4"]) == 0
        for name in ("report.json", "reliability.json", "report.csv", "report.md"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_rerun_from_report(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(a)]) == 0
        assert main(["bench", "--config", str(a / "report.json"), "--out-dir", str(b)]) == 0
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

    def test_out_dir_precedence(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("AMBICAL_OUT", str(tmp_path / "env"))
        monkeypatch.chdir(tmp_path)
        assert main(["bench", "--config", str(workspace / "config.json")]) == 0
        assert (tmp_path / "env" / "report.json").exists()
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "report.json").exists()
        monkeypatch.delenv("AMBICAL_OUT")
        assert main(["bench", "--config", str(workspace / "config.json")]) == 0
        assert (tmp_path / "ambical_out" / "report.json").exists()

    def test_oracle_flag(self, workspace, tmp_path):
        assert main(["bench", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path), "--oracle"]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert any(c["method"] == "oracle_ts" and c["oracle"] for c in rep["cells"])


class TestOtherCommands:
    def test_ablate(self, workspace, tmp_path):
        args = ["ablate", "--axis", "annotations", "--values", "1,5", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path)]
        assert main(args) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["axis"] == "annotations" and rep["values"] == [1, 5]

    def test_ablate_needs_values(self, workspace, tmp_path, capsys):
        assert main(["ablate", "--axis", "calsize", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path)]) == 1

    def test_simulate(self, tmp_path):
        out = tmp_path / "sim.jsonl"
        assert main(["simulate", "--n", "50", "--m", "9", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert json.loads(lines[0])["K"] == 8
        assert len(lines) == 51 and len(json.loads(lines[1])["annotations"]) == 9

    def test_check_theory(self, workspace, tmp_path, capsys):
        assert main(["check-theory", "--config", str(workspace / "config.json"), "--out-dir", str(tmp_path)]) == 0
        theory = json.loads((tmp_path / "theory.json").read_text())
        assert theory["temperature_order"]["status"] == "pass"
        assert "temperature order" in capsys.readouterr().out

    def test_toy(self, tmp_path):
        assert main(["toy", "--seed", "42", "--out-dir", str(tmp_path)]) == 0
        for name in ("toy_report.json", "toy_report.md", "toy_points.csv"):
            assert (tmp_path / name).exists()
        doc = json.loads((tmp_path / "toy_report.json").read_text())
        assert all(doc["checks"].values())
        header = (tmp_path / "toy_points.csv").read_text().splitlines()[0]
        assert header == "x,y,cluster,split,train_label,voted_label"
