import csv
import json
import subprocess
import sys

import pytest

from tca.backbone import load_weights
from tca.harness.cli import main, parse_int_list

SMALL = ["--grid", "8x8", "--window", "4", "--channels", "8", "--blocks", "4", "--heads", "2"]


def test_parse_int_list():
    assert parse_int_list("0..3") == [0, 1, 2, 3]
    assert parse_int_list("2,4, 5") == [2, 4, 5]


def test_run_writes_frames(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", *SMALL, "--frames", "3", "--clusters", "2", "--alpha", "1", "--beta", "2",
                 "--out", str(out)])
    assert code == 0
    with open(out / "frames.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and rows[0]["is_keyframe"] in ("1", "True", "true")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "cluster+tca" and summary["frames"] == 3
    assert "FPS" in capsys.readouterr().out


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": "8x8", "window": 4, "channels": 8, "blocks": 4, "heads": 2,
                               "frames": 2, "clusters": 2, "method": "cluster"}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--frames", "4", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["frames"] == 4 and summary["method"] == "cluster-only"


def test_sweep_command(tmp_path):
    out = tmp_path / "s"
    code = main(["sweep", *SMALL, "--frames", "2", "--alphas", "0..1", "--clusters", "1,2",
                 "--methods", "baseline,tca", "--out", str(out), "--svg"])
    assert code == 0
    assert (out / "sweep.csv").exists() and (out / "sweep.json").exists() and (out / "pareto.svg").exists()
    assert len(json.loads((out / "sweep.json").read_text())) == 1 + 4


def test_gen_weights_and_reload(tmp_path):
    path = tmp_path / "m.tcaw"
    assert main(["gen-weights", *SMALL, "--seed", "3", "--out", str(path)]) == 0
    m = load_weights(path)
    assert m.num_blocks == 4 and m.spec.channels == 8
    out = tmp_path / "r"
    assert main(["run", "--weights", str(path), "--frames", "2", "--clusters", "2", "--out", str(out)]) == 0


@pytest.mark.parametrize("argv", [
    ["run", *SMALL, "--frames", "1", "--clusters", "5"],  # N=25 > M=16
    ["run", *SMALL, "--frames", "1", "--alpha", "9", "--clusters", "2"],
    ["sweep", *SMALL, "--alphas", "", "--clusters", "2"],
    ["run", "--grid", "10x8", "--frames", "1"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main([*argv, "--out", str(tmp_path / "x")]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_weight_file_exit_2(tmp_path):
    bad = tmp_path / "bad.tcaw"
    bad.write_bytes(b"nope")
    assert main(["run", "--weights", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_io_errors_exit_3(tmp_path, capsys):
    assert main(["run", "--weights", str(tmp_path / "missing.tcaw"), "--out", str(tmp_path)]) == 3
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["run", *SMALL, "--frames", "1", "--clusters", "2", "--out", str(blocker / "sub")]) == 3
    assert "I/O error" in capsys.readouterr().err


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tca.harness.cli", "gen-weights", *SMALL,
                           "--out", str(tmp_path / "w.tcaw")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
