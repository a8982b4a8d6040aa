import hashlib
import json
import math
import shutil
import subprocess
import sys

import pytest

from scenemem.agent import load_checkpoint, save_checkpoint
from scenemem.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main

TINY = {
    "world": {"v_lm": 8},
    "agent": {"d": 16, "heads": 2, "v_lm": 8},
    "training": {"iterations": 3, "batch_size": 4},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert main(["gen", "--seed", "3", "--scenes", "2", "--episodes-per-scene", "3", "--nodes", "10",
                 "--config", str(root / "cfg.json"), "--out", str(root / "data.json")]) == EXIT_OK
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data.json"),
                 "--out", str(root / "run")]) == EXIT_OK
    return root


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_train_outputs(trained):
    run = trained / "run"
    lines = (run / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3 and "loss" in json.loads(lines[0])
    assert json.loads((run / "config.json").read_text())["agent"]["d"] == 16


def test_eval_outputs_and_determinism(trained, capsys):
    args = ["eval", "--checkpoint", str(trained / "run/checkpoint.json"), "--data", str(trained / "data.json"),
            "--protocol", "single", "--shuffle-seed", "1"]
    assert main(args + ["--out", str(trained / "e1")]) == EXIT_OK
    assert main(args + ["--out", str(trained / "e2")]) == EXIT_OK
    assert digest(trained / "e1/records.jsonl") == digest(trained / "e2/records.jsonl")
    recs = (trained / "e1/records.jsonl").read_text().splitlines()
    assert len(recs) == 6
    assert (trained / "e1/summary.csv").read_text().startswith("metric,mean,std\n")
    assert "spl," in capsys.readouterr().out


def test_ablate_outputs(trained):
    out = trained / "abl"
    assert main(["ablate", "--checkpoint", str(trained / "run/checkpoint.json"), "--data",
                 str(trained / "data.json"), "--out", str(out)]) == EXIT_OK
    for kind in ("single", "twopass", "reinit", "zero"):
        assert (out / f"records_{kind}.jsonl").exists()
    rows = (out / "protocols.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["single", "twopass", "reinit", "zero"]
    assert (out / "comparison.csv").read_text().count("\n") == 4
    assert (out / "protocols.png").read_bytes()[:4] == b"\x89PNG"


def test_curve_from_records_and_checkpoint(trained):
    main(["eval", "--checkpoint", str(trained / "run/checkpoint.json"), "--data", str(trained / "data.json"),
          "--out", str(trained / "e3")])
    assert main(["curve", "--records", str(trained / "e3/records.jsonl"), "--window", "2",
                 "--out", str(trained / "c1")]) == EXIT_OK
    rows = (trained / "c1/curve_spl.csv").read_text().splitlines()
    assert rows[0] == "progress,spl" and len(rows) == 1 + 5
    assert (trained / "c1/curve_spl.png").exists()
    assert main(["curve", "--checkpoint", str(trained / "run/checkpoint.json"), "--data",
                 str(trained / "data.json"), "--metric", "cls", "--out", str(trained / "c2")]) == EXIT_OK
    assert (trained / "c2/curve_cls.csv").exists()
    assert main(["curve", "--out", str(trained / "c3")]) == EXIT_CONFIG


def test_stability_outputs(trained):
    out = trained / "st"
    assert main(["stability", "--checkpoint", str(trained / "run/checkpoint.json"), "--data",
                 str(trained / "data.json"), "--orders", "3", "--protocol", "zero", "--out", str(out)]) == EXIT_OK
    rows = {r.split(",")[0]: r.split(",") for r in (out / "stability_zero.csv").read_text().splitlines()}
    assert rows["metric"][3:] == ["order0", "order1", "order2"]
    assert float(rows["spl"][2]) == 0.0
    assert (out / "stability_zero.png").exists()


def test_config_errors_exit_2(trained, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"agent": {"d": 7}}))
    assert main(["train", "--config", str(tmp_path / "bad.json"), "--data", str(trained / "data.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(trained / "data.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    (tmp_path / "junk.json").write_text("not json")
    assert main(["eval", "--checkpoint", str(trained / "run/checkpoint.json"), "--data",
                 str(tmp_path / "junk.json"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    # a dataset built for another landmark vocabulary does not fit the checkpoint
    main(["gen", "--seed", "1", "--scenes", "1", "--episodes-per-scene", "1", "--nodes", "8", "--v-lm", "5",
          "--out", str(tmp_path / "other.json")])
    assert main(["eval", "--checkpoint", str(trained / "run/checkpoint.json"), "--data",
                 str(tmp_path / "other.json"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_numeric_fault_exit_3(trained, tmp_path):
    params, cfg, meta = load_checkpoint(trained / "run/checkpoint.json")
    params["pred_W2"].data[0, 0] = math.nan
    save_checkpoint(tmp_path / "nan.json", params, cfg, meta)
    assert main(["eval", "--checkpoint", str(tmp_path / "nan.json"), "--data", str(trained / "data.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_NUMERIC


@pytest.mark.skipif(shutil.which("scenemem") is None, reason="console script not installed")
def test_console_script(tmp_path):
    done = subprocess.run(["scenemem", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "stability" in done.stdout
    done = subprocess.run([sys.executable, "-m", "scenemem.cli", "eval"], capture_output=True, text=True)
    assert done.returncode == 2
