import subprocess
import sys

import numpy as np
import pytest

from wcellnet.cli import main
from wcellnet.data import load_stack, read_pgm, write_pgm


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--videos", "2", "--frames", "12", "--height", "16", "--width", "16",
                 "--cells", "1-3", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_synth_manifest(data_dir):
    files = sorted(data_dir.glob("*.cvip"))
    assert len(files) == 2
    assert load_stack(files[0]).shape == (12, 16, 16)


def test_synth_rejects_bad_size(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--height", "20", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_bad_cells_argument(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--cells", "5-2", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_count_params(capsys):
    assert main(["count-params", "--k", "16", "--if", "3"]) == 0
    assert capsys.readouterr().out.strip() == "1273587"
    assert main(["count-params", "--k", "4", "--if", "3", "--upconv-kernel", "2", "--build"]) == 0
    built = int(capsys.readouterr().out)
    main(["count-params", "--k", "4", "--if", "3", "--upconv-kernel", "2"])
    assert int(capsys.readouterr().out) == built


def test_baseline(data_dir, tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["baseline", "--data", str(data_dir), "--if", "3", "--split", "all", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "split,n,mse,psnr"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["all:FFR", "all:LFR", "all:WF"]
    assert all(ln.split(",")[1] == "16" for ln in lines[1:])


def test_train_eval_interpolate(data_dir, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("k = 4\nif = 3\niterations = 50\nbatch_size = 2\naugment = false\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--iters", "3", "--data", str(data_dir),
                 "--out-dir", str(run)]) == 0
    assert len((run / "train_log.csv").read_text().splitlines()) == 4  # --iters overrides the file

    metrics = tmp_path / "m.csv"
    assert main(["eval", "--checkpoint", str(run / "final.wcnc"), "--data", str(data_dir),
                 "--split", "all", "--out", str(metrics)]) == 0
    rows = [ln.split(",") for ln in metrics.read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["train", "val", "test"]
    assert sum(int(r[1]) for r in rows) == 16

    stack = load_stack(sorted(data_dir.glob("*.cvip"))[0])
    write_pgm(tmp_path / "a.pgm", stack.frames[0])
    write_pgm(tmp_path / "b.pgm", stack.frames[4])
    capsys.readouterr()
    assert main(["interpolate", "--checkpoint", str(run / "final.wcnc"), "--first", str(tmp_path / "a.pgm"),
                 "--last", str(tmp_path / "b.pgm"), "--out-prefix", str(tmp_path / "out" / "f")]) == 0
    paths = capsys.readouterr().out.split()
    assert [p[-8:] for p in paths] == ["f_01.pgm", "f_02.pgm", "f_03.pgm"]
    assert read_pgm(paths[0]).shape == (16, 16)


def test_train_without_data_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.wcnc"), "--data", str(tmp_path)]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert main(["train", "--config", str(bad), "--data", str(tmp_path)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_interpolate_size_mismatch(tmp_path, data_dir):
    run = tmp_path / "r"
    main(["train", "--k", "4", "--if", "3", "--iters", "1", "--batch", "2", "--data", str(data_dir),
          "--out-dir", str(run)])
    write_pgm(tmp_path / "a.pgm", np.zeros((16, 16), np.uint8))
    write_pgm(tmp_path / "b.pgm", np.zeros((32, 32), np.uint8))
    assert main(["interpolate", "--checkpoint", str(run / "final.wcnc"), "--first", str(tmp_path / "a.pgm"),
                 "--last", str(tmp_path / "b.pgm"), "--out-prefix", str(tmp_path / "x")]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "wcellnet", "count-params", "--k", "4", "--if", "5"],
                          capture_output=True, text=True, check=True)
    assert int(proc.stdout) > 0
