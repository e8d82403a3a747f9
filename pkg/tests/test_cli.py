import json
import subprocess
import sys

import pytest

from ffpkit.heads import HeadPartition

from conftest import tiny_config


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "ffpkit", *map(str, args)], capture_output=True, text=True, cwd=cwd)


def error_line(proc):
    return json.loads(proc.stderr.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config()
    cfg.output_dir = str(root / "run")
    cfg.save(root / "cfg.json")
    return root


def test_end_to_end(workspace):
    root = workspace
    p = run("gen-data", "--seed", 1, "--count", 3, "--config", root / "cfg.json", "--out", root / "eval.npz")
    assert p.returncode == 0, p.stderr
    assert json.loads(p.stdout)["count"] == 3

    p = run("train", "--config", root / "cfg.json", "--ablation", "full")
    assert p.returncode == 0, p.stderr
    ckpt = json.loads(p.stdout)["checkpoint"]

    p = run("classify-heads", "--ckpt", ckpt, "--samples", 2, "--epsilon", 1e-6, "--out", root / "heads.json")
    assert p.returncode == 0, p.stderr
    assert HeadPartition.load(root / "heads.json").samples == 2

    p = run("eval", "--ckpt", ckpt, "--data", root / "eval.npz", "--report", root / "report.json", "--steps", 2)
    assert p.returncode == 0, p.stderr
    assert (root / "report.tsv").exists()
    first = json.loads((root / "report.json").read_text())

    p = run("eval", "--ckpt", ckpt, "--data", root / "eval.npz", "--report", root / "again.json", "--steps", 2)
    assert json.loads((root / "again.json").read_text()) == first


def test_grad_check(tmp_path):
    p = run("grad-check", "--component", "motion", "--h", 1e-6, "--tol", 1e-4)
    assert p.returncode == 0, p.stderr
    out = json.loads(p.stdout)
    assert out["component"] == "motion" and out["max_rel_error"] < 1e-4


def test_grad_check_tolerance_failure():
    p = run("grad-check", "--component", "flow", "--tol", 1e-30)
    assert p.returncode != 0
    assert error_line(p)["error"] == "error"


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text('{"seed": 0, "optimiser": {}}')
    p = run("train", "--config", tmp_path / "c.json")
    assert p.returncode == 1
    assert error_line(p)["error"] == "configuration"


def test_missing_file(tmp_path):
    p = run("eval", "--ckpt", tmp_path / "none.ffpk", "--data", tmp_path / "none.npz", "--report", tmp_path / "r.json")
    assert p.returncode != 0
    assert error_line(p)["error"] == "io"


def test_bad_canvas(tmp_path):
    cfg = tiny_config().to_dict()
    cfg["data"]["height"] = cfg["data"]["width"] = 4
    cfg["model"]["height"] = cfg["model"]["width"] = 2
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    p = run("gen-data", "--config", tmp_path / "c.json", "--out", tmp_path / "d.npz")
    assert p.returncode == 1
    assert error_line(p)["error"] == "invalid-argument"


def test_usage_error():
    p = run("train")
    assert p.returncode == 2
