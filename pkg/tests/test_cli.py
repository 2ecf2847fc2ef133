import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from vrtkit.harness.cli import main
from vrtkit.harness.io import load_sequence, save_sequence
from vrtkit.harness.synthetic import translating_clip

SMALL = ["--set", "scales=1", "--set", "depth=2", "--set", "channels=6", "--set", "heads=2",
         "--set", "window=4", "--set", "refinement_depth=1", "--set", "scale=2"]


def rows(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture
def hq_dir(tmp_path):
    save_sequence(translating_clip(3, 16, 16, (1.0, 0.0)), tmp_path / "hq")
    return tmp_path / "hq"


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12 and all(line.startswith("PASS") for line in lines)


def test_degrade_restore_eval(tmp_path, hq_dir, capsys):
    lq_dir, out_dir = tmp_path / "lq", tmp_path / "out"
    assert main(["degrade", "--in", str(hq_dir), "--out", str(lq_dir), "--scale", "2"]) == 0
    assert load_sequence(lq_dir).shape == (3, 8, 8, 3)

    assert main(["restore", *SMALL, "--in", str(lq_dir), "--out", str(out_dir),
                 "--csv", str(tmp_path / "t.csv")]) == 0
    assert load_sequence(out_dir).shape == (3, 16, 16, 3)
    timing = rows((tmp_path / "t.csv").read_text())
    assert timing[0][-1] == "runtime_ms" and timing[1][1:5] == ["3", "16", "16", "3"]

    capsys.readouterr()
    assert main(["eval", "--lq", str(out_dir), "--hq", str(hq_dir)]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0][:4] == ["sequence", "frames", "psnr_mean", "ssim_mean"]
    assert 15 < float(table[1][2]) < 100


def test_eval_upsamples_low_resolution_input(tmp_path, hq_dir, capsys):
    main(["degrade", "--in", str(hq_dir), "--out", str(tmp_path / "lq"), "--scale", "2"])
    capsys.readouterr()
    assert main(["eval", "--lq", str(tmp_path / "lq"), "--hq", str(hq_dir)]) == 0
    assert len(rows(capsys.readouterr().out)) == 2


def test_eval_rejects_incomparable_shapes(tmp_path, hq_dir, capsys):
    save_sequence(np.zeros((3, 5, 16, 3), np.float32), tmp_path / "odd")
    assert main(["eval", "--lq", str(tmp_path / "odd"), "--hq", str(hq_dir)]) == 1
    assert "not comparable" in capsys.readouterr().err


def test_train_smoke_and_checkpoint(tmp_path, capsys):
    ckpt = tmp_path / "ckpt"
    assert main(["train-smoke", *SMALL, "--steps", "3", "--size", "8", "--frames", "2",
                 "--save", str(ckpt)]) == 0
    curve = rows(capsys.readouterr().out)
    assert curve[0] == ["step", "loss"] and len(curve) == 4
    save_sequence(np.full((2, 8, 8, 3), 0.5, np.float32), tmp_path / "in.ntf")
    assert main(["restore", "--checkpoint", str(ckpt), "--in", str(tmp_path / "in.ntf"),
                 "--out", str(tmp_path / "out.ntf")]) == 0
    assert load_sequence(tmp_path / "out.ntf").shape == (2, 16, 16, 3)


def test_grad_check_command(capsys):
    assert main(["grad-check", "--set", "depth=1", "--set", "refinement_depth=0",
                 "--frames", "2", "--size", "4"]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["tensor", "max_rel_error", "pass"]
    assert all(r[2] == "yes" for r in table[1:])


def test_grad_check_needs_float64(capsys):
    assert main(["grad-check", "--set", "dtype=float32"]) == 1
    assert "float64" in capsys.readouterr().err


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert main(["restore", *SMALL, "--in", str(tmp_path / "missing.mp4"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "vrtkit restore:" in capsys.readouterr().err


def test_bad_config_exits_one(tmp_path, capsys):
    (tmp_path / "in").mkdir()
    assert main(["restore", "--set", "heads=5", "--in", str(tmp_path / "in"),
                 "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("argv", [["restore", "--bogus"], ["nope"], []])
def test_usage_errors_exit_two(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "vrtkit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train-smoke" in out.stdout
