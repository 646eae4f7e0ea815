import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from diffrerank.cli import run_cli
from diffrerank.data import load_checkpoint, write_idx


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    r = np.random.default_rng(0)
    n = 60
    labels = np.repeat([0, 1], n // 2)
    centre = np.where(labels[:, None, None] == 0, 80, 170)
    images = np.clip(centre + r.normal(0, 45, size=(n, 3, 3)), 0, 255).astype(np.uint8)
    write_idx(d / "img.idx", d / "lab.idx", images, labels)
    cfg = {"epochs": 3, "hidden": 16, "time_embed_dim": 8, "class_embed_dim": 4, "batch_size": 16,
           "base_epochs": 2, "base_hidden": 8, "t_eval": 4, "voters": 2, "K": 2, "prot": 0.9}
    (d / "c.json").write_text(json.dumps(cfg))
    data = ["--data-images", str(d / "img.idx"), "--data-labels", str(d / "lab.idx")]
    common = ["--config", str(d / "c.json"), *data]
    assert run_cli(["train-base", *common, "--out", str(d / "base.ckpt")]) == 0
    assert run_cli(["train-diffusion", *common, "--out", str(d / "den.ckpt")]) == 0
    return d, common


def ckpts(d):
    return ["--checkpoint", str(d / "base.ckpt"), "--checkpoint", str(d / "den.ckpt")]


def test_checkpoints_carry_metadata(workspace):
    d, _ = workspace
    base = load_checkpoint(d / "base.ckpt")
    den = load_checkpoint(d / "den.ckpt")
    assert base.metadata["kind"] == "base_classifier" and len(base.metadata["accuracy_curve"]) == 2
    assert den.metadata["kind"] == "denoiser" and len(den.metadata["loss_curve"]) == 3
    assert den.metadata["schedule"] == {"t_max": 1000, "beta_start": 1e-4, "beta_end": 0.02}
    assert den.arrays["w_in"].shape == (9 + 8 + 4, 16)


def test_evaluate_report(workspace):
    d, common = workspace
    out = d / "report.json"
    assert run_cli(["evaluate", *common, *ckpts(d), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n_total"] == 60
    assert rep["n_reclassified"] == rep["t_t"] + rep["t_f"] + rep["f_t"] + rep["f_f"]
    assert rep["n_total"] == rep["n_protected"] + rep["n_reclassified"]
    assert abs(rep["final_accuracy"] - rep["base_accuracy"] - (rep["f_t"] - rep["t_f"]) / 60) < 1e-9
    assert rep["config"]["prot"] == 0.9 and rep["config"]["voters"] == 2


def test_seed_flag_overrides_config(workspace):
    d, common = workspace
    a, b = d / "s1.json", d / "s2.json"
    assert run_cli(["evaluate", *common, *ckpts(d), "--seed", "5", "--out", str(a)]) == 0
    assert run_cli(["evaluate", *common, *ckpts(d), "--seed", "5", "--workers", "3", "--out", str(b)]) == 0
    assert json.loads(a.read_text())["config"]["seed"] == 5
    assert a.read_bytes() == b.read_bytes()


def test_calibrate_and_quantile_evaluation(workspace):
    d, common = workspace
    cal = d / "cal.json"
    assert run_cli(["calibrate", *common, "--checkpoint", str(d / "base.ckpt"), "--out", str(cal)]) == 0
    info = json.loads(cal.read_text())
    assert info["n_correct"] == len(info["correct_scores"]) > 0
    assert info["mode"] == "absolute"
    if "mann_whitney" in info:
        assert 0.0 <= info["mann_whitney"]["p_value"] <= 1.0
    qcfg = d / "q.json"
    qcfg.write_text(json.dumps({**json.loads((d / "c.json").read_text()), "mode": "quantile", "prot": 0.5}))
    out = d / "q_report.json"
    args = ["evaluate", "--config", str(qcfg), *common[2:], *ckpts(d), "--calibration", str(cal), "--out", str(out)]
    assert run_cli(args) == 0
    assert json.loads(out.read_text())["config"]["mode"] == "quantile"
    # quantile mode without calibration data is a usage error
    assert run_cli(["evaluate", "--config", str(qcfg), *common[2:], *ckpts(d), "--out", str(out)]) == 2


def test_ablate_table(workspace):
    d, common = workspace
    out = d / "abl.csv"
    assert run_cli(["ablate", *common, *ckpts(d), "--grid", "lambda=1.0,2.0", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][0] == "lambda" and [r[0] for r in rows[1:]] == ["1.0", "2.0"]
    assert run_cli(["ablate", *common, *ckpts(d), "--grid", "gamma=1", "--out", str(out)]) == 1
    assert run_cli(["ablate", *common, *ckpts(d), "--grid", "lambda", "--out", str(out)]) == 2


def test_export_scores(workspace):
    d, common = workspace
    out = d / "scores.csv"
    assert run_cli(["export-scores", *common, "--checkpoint", str(d / "base.ckpt"), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["score", "correct"] and len(rows) == 61
    assert all(r[1] in ("0", "1") for r in rows[1:])
    trace = d / "trace.csv"
    assert run_cli(["export-scores", *common, *ckpts(d), "--out", str(trace)]) == 0
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["example", "voter", "candidate", "timestep", "error"]
    # each reclassified example contributes voters x K x t_eval rows
    assert (len(rows) - 1) % (2 * 2 * 4) == 0


def test_unknown_subcommand_exits_2(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli([]) == 2


def test_missing_checkpoint_exits_1(workspace, capsys):
    d, common = workspace
    missing = d / "nowhere.ckpt"
    assert run_cli(["evaluate", *common, "--checkpoint", str(missing), "--out", str(d / "x.json")]) == 1
    assert str(missing) in capsys.readouterr().err
    assert not (d / "x.json").exists()


def test_bad_config_exits_1(workspace, capsys):
    d, common = workspace
    bad = d / "bad.json"
    bad.write_text('{"prot": 1.5}')
    assert run_cli(["evaluate", "--config", str(bad), *common[2:], *ckpts(d), "--out", str(d / "y.json")]) == 1
    assert "prot" in capsys.readouterr().err


def test_missing_out_is_usage_error(workspace):
    d, common = workspace
    assert run_cli(["evaluate", *common, *ckpts(d)]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "diffrerank", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
    proc = subprocess.run([sys.executable, "-m", "diffrerank", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
