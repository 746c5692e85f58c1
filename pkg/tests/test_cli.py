import os
import subprocess
import sys

import numpy as np
import pytest

from pgdk.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from pgdk.diagnostics import gen_linear_data
from pgdk.replay import Transition, dump_csv

SMALL = ["--set", "episodes=3", "--set", "horizon=50", "--set", "batch=16",
         "--set", "critic_hidden=16", "--set", "g_hidden=8"]


def _pairs(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--out", str(out), "--dump-transitions"] + SMALL) == EXIT_OK
    return out


def test_train_writes_artifacts(run_dir):
    for name in ("manifest.txt", "train_log.csv", "transitions.csv", "actor.ckpt", "critic.ckpt",
                 "koopman_g.ckpt", "koopman_A.mat"):
        assert (run_dir / name).exists(), name
    manifest = (run_dir / "manifest.txt").read_text()
    assert "episodes=3" in manifest and "horizon=50" in manifest and "r=8" in manifest


def test_manifest_reproduces_run(run_dir, tmp_path):
    assert main(["train", "--config", str(run_dir / "manifest.txt"), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "train_log.csv").read_bytes() == (run_dir / "train_log.csv").read_bytes()


def test_eval(run_dir, capsys):
    assert main(["eval", "--checkpoint-dir", str(run_dir), "--episodes", "2"]) == EXIT_OK
    pairs = _pairs(capsys.readouterr().out)
    assert pairs["episodes"] == "2" and float(pairs["mean_step_cost"]) >= 0


def test_eval_missing_manifest(tmp_path):
    assert main(["eval", "--checkpoint-dir", str(tmp_path)]) == EXIT_CONFIG


def test_report(run_dir, capsys):
    code = main(["report", "--log", str(run_dir / "train_log.csv")])
    pairs = _pairs(capsys.readouterr().out)
    assert pairs["T"] == "135" and pairs["samples_3TN"] == str(3 * 135 * 16)
    assert pairs["accounting_ok"] == "1"
    assert code in (EXIT_OK, EXIT_CHECK)


def test_report_short_log(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", "episodes=1", "--set", "horizon=20",
                 "--set", "batch=16"]) == EXIT_OK
    assert main(["report", "--log", str(tmp_path / "train_log.csv")]) != EXIT_OK


def test_gradcheck(capsys):
    assert main(["gradcheck", "--trials", "5"]) == EXIT_OK
    pairs = _pairs(capsys.readouterr().out)
    for loss in ("L1", "L3", "L2"):
        assert float(pairs[f"{loss}_max_rel_error"]) < 1e-4
    assert pairs["passed"] == "1"


def test_gradcheck_corrupt(capsys):
    assert main(["gradcheck", "--trials", "3", "--corrupt"]) == EXIT_CHECK
    assert _pairs(capsys.readouterr().out)["passed"] == "0"


def _linear_dump(path, rows):
    d = gen_linear_data(np.array([[0.9, 0.2], [-0.1, 0.8]]), np.array([[0.0], [0.5]]), rows, 1.0, 0)
    dump_csv(path, [Transition(d.X[:, k], d.U[:, k], d.costs[k], d.Xbar[:, k]) for k in range(d.N)])


def test_sysid(tmp_path, capsys):
    _linear_dump(tmp_path / "d.csv", 200)
    code = main(["sysid", "--data", str(tmp_path / "d.csv"), "--set", "augment_state=1",
                 "--set", "sysid_iters=20", "--out", str(tmp_path / "model")])
    assert code == EXIT_OK
    pairs = _pairs(capsys.readouterr().out)
    assert float(pairs["one_step_max"]) < 1e-6
    assert (tmp_path / "model" / "koopman_A.mat").exists()


def test_sysid_too_few_rows(tmp_path, capsys):
    _linear_dump(tmp_path / "d.csv", 63)
    assert main(["sysid", "--data", str(tmp_path / "d.csv")]) == EXIT_CONFIG
    assert "batch needs 64" in capsys.readouterr().err


def test_sysid_malformed_dump(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x0,x1,u0,cost,xn0,xn1\n1,2,3,4,5\n")
    assert main(["sysid", "--data", str(tmp_path / "d.csv")]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", "nonsense=1"]) == EXIT_CONFIG
    assert main(["train", "--out", str(tmp_path), "--set", "alpha_mu=100"]) == EXIT_CONFIG
    assert main(["gradcheck", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_divergence_exit_code(tmp_path):
    code = main(["train", "--out", str(tmp_path), "--set", "episodes=2", "--set", "batch=16",
                 "--set", "env.u_max=1e200", "--set", "noise_sigma0=1e200"])
    assert code == EXIT_DIVERGED


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pgdk", "--version"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert out.returncode == 0 and out.stdout.startswith("pgdk ")
