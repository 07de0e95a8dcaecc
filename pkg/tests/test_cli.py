import json
import subprocess
import sys

import numpy as np
import pytest

from sparsecert.cli import main
from sparsecert.netcore import load_checkpoint
from sparsecert.train import init_network

TRAIN = ["--synthetic", "400", "--synthetic-dim", "8", "--classes", "3", "--hidden", "10",
         "--steps", "40", "--batch-size", "20", "--lr", "0.1", "--seed", "1"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *TRAIN, "--out", str(out), "--canonical"]) == 0
    return out


def test_train_outputs(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert {"prior_zero.spnet", "prior_data.spnet", "model.spnet", "splits.npz",
            "train_log.jsonl", "manifest.json"} <= names
    m = json.loads((run_dir / "manifest.json").read_text())
    assert m["dims"] == [8, 10, 3] and "timestamp" not in m
    assert m["seeds"]["seed"] == 1 and m["sizes"]["prior"] > 0
    assert all(np.all(w == 0) for w in load_checkpoint(run_dir / "prior_zero.spnet").layers)


def test_train_canonical_is_byte_identical(run_dir, tmp_path):
    assert main(["train", *TRAIN, "--out", str(tmp_path), "--canonical"]) == 0
    for name in ("prior_data.spnet", "model.spnet", "train_log.jsonl"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()
    a = json.loads((tmp_path / "manifest.json").read_text())
    b = json.loads((run_dir / "manifest.json").read_text())
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b


def test_steps_zero_emits_init(tmp_path):
    args = [a if a != "40" else "0" for a in TRAIN]
    assert main(["train", *args, "--out", str(tmp_path)]) == 0
    init = init_network([8, 10, 3], 1)
    assert load_checkpoint(tmp_path / "model.spnet") == init
    assert load_checkpoint(tmp_path / "prior_data.spnet") == init


def test_certify_both_modes(run_dir, tmp_path):
    out = tmp_path / "cert.json"
    rc = main(["certify", "--run", str(run_dir), "--mode", "both", "--eps-bar", "0.1", "--alpha", "0.05",
               "--out", str(out), "--canonical"])
    assert rc == 0
    d = json.loads(out.read_text())
    assert set(d["reports"]) == {"expanded", "simplified"}
    for rep in d["reports"].values():
        assert rep["delta"] == d["delta_red"] < 0.05
        assert rep["final_bound_clamped"] <= 1.0
    again = tmp_path / "again.json"
    main(["certify", "--run", str(run_dir), "--mode", "both", "--eps-bar", "0.1", "--alpha", "0.05",
          "--out", str(again), "--canonical"])
    a, b = json.loads(out.read_text()), json.loads(again.read_text())
    a["manifest"]["config"].pop("out"), b["manifest"]["config"].pop("out")
    assert a == b


def test_search_outputs(run_dir, tmp_path):
    rc = main(["search", "--run", str(run_dir), "--prior", "zero", "--eps-grid", "0.001,0.1",
               "--alpha-grid", "0,0.1", "--out-dir", str(tmp_path), "--canonical"])
    assert rc == 0
    s = json.loads((tmp_path / "search.json").read_text())
    assert len(s["cells"]) == 4 and s["prior"] == "zero"
    best = json.loads((tmp_path / "best_report.json").read_text())
    assert best["final_bound_raw"] == min(c["final_bound_raw"] for c in s["cells"])
    n_cert = json.loads((run_dir / "manifest.json").read_text())["sizes"]["train"]
    lines = (tmp_path / "kappa_hist.csv").read_text().splitlines()
    assert lines[0] == "# manifest=manifest.json"
    counts = {}
    for row in lines[2:]:
        e, _, _, c = row.split(",")
        counts[e] = counts.get(e, 0) + int(c)
    assert counts == {"0.001": n_cert, "0.1": n_cert}
    kappa = (tmp_path / "kappa.csv").read_text().splitlines()
    assert kappa[0].startswith("# manifest=") and len(kappa) == n_cert + 2


def test_refusals_and_io_errors(run_dir, tmp_path):
    assert main(["certify", "--run", str(run_dir), "--cert-split", "full", "--out", str(tmp_path / "x.json")]) == 2
    assert main(["train", "--hidden", "5", "--out", str(tmp_path / "r")]) == 2
    assert main(["certify", "--run", str(tmp_path / "missing"), "--out", str(tmp_path / "x.json")]) == 4
    bad = tmp_path / "bad.spnet"
    bad.write_bytes(b"not a checkpoint")
    assert main(["certify", "--run", str(run_dir), "--prior-file", str(bad), "--out", str(tmp_path / "x.json")]) == 4
    assert main(["train", "--data-dir", str(tmp_path), "--out", str(tmp_path / "r")]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["search", "--run", str(run_dir), "--eps-grid", "a,b", "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_verify_smoke(tmp_path):
    out = tmp_path / "verify.json"
    assert main(["verify", "--trials", "1", "--out", str(out), "--canonical"]) == 0
    d = json.loads(out.read_text())
    assert [r["verdict"] for r in d["reports"]] == ["pass"] * 4


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sparsecert", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "0.1.0"
