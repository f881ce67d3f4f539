import subprocess
import sys

import numpy as np
import pytest

from vsscrowd.cli import format_scaling, main, scaling_rows
from vsscrowd.config import toy_config
from vsscrowd.data import env_threads, read_pnm, write_pnm
from vsscrowd.head import PointSet

TINY_CFG = "base_channels=8\nstage_depths=1,1,1\nstate_dim=4\nhead_hidden=8\nfusion.lateral_channels=16\n"


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "tiny.cfg").write_text(TINY_CFG)
    assert main(["synth-gen", "--out", str(tmp_path / "ds"), "--train", "2", "--test", "2",
                 "--size", "32", "--count", "2,5", "--seed", "1"]) == 0
    return tmp_path


def run_train(ws, out, *extra):
    return main(["train", "--config", str(ws / "tiny.cfg"), "--data", str(ws / "ds"), "--out", str(ws / out),
                 "--steps", "3", *extra])


def test_synth_gen_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["synth-gen", "--out", str(tmp_path / name), "--train", "2", "--seed", "9"])
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_train_deterministic_and_logged(workspace):
    assert run_train(workspace, "r1", "--seed", "5") == 0
    assert run_train(workspace, "r2", "--seed", "5") == 0
    for name in ("model.ckpt", "train.log", "config.txt"):
        assert (workspace / "r1" / name).read_bytes() == (workspace / "r2" / name).read_bytes()
    lines = (workspace / "r1" / "train.log").read_text().splitlines()
    assert len(lines) == 3
    assert all(set(k for k, _ in (kv.split("=") for kv in ln.split())) ==
               {"step", "sample", "total", "cls", "loc", "cnt"} for ln in lines)


def test_evaluate_report(workspace, capsys):
    run_train(workspace, "r")
    out = workspace / "report.txt"
    args = ["evaluate", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--data", str(workspace / "ds"),
            "--sigma", "4,8", "--threshold", "0.001"]
    assert main(args + ["--out", str(out)]) == 0
    report = dict(line.split("=", 1) for line in out.read_text().splitlines())
    assert {"mae", "rmse", "mse_paper", "sigma4.standard.f1", "sigma8.paper_text.recall"} <= report.keys()
    assert int(report["sigma4.standard.tp"]) <= int(report["sigma8.standard.tp"])
    capsys.readouterr()
    main(args)
    assert capsys.readouterr().out == out.read_text()


def test_evaluate_empty_split(workspace):
    run_train(workspace, "r")
    assert main(["evaluate", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--data",
                 str(workspace / "ds"), "--split", "val"]) == 4


def test_evaluate_manifest_mismatch(workspace, capsys):
    run_train(workspace, "r")
    (workspace / "other.cfg").write_text(TINY_CFG.replace("head_hidden=8", "head_hidden=4"))
    code = main(["evaluate", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--config",
                 str(workspace / "other.cfg"), "--data", str(workspace / "ds")])
    assert code == 3
    assert "head.reg1.weight" in capsys.readouterr().err


def test_predict_blank_image_high_threshold(workspace):
    run_train(workspace, "r")
    write_pnm(workspace / "blank.ppm", np.zeros((3, 40, 40)))
    assert main(["predict", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--image",
                 str(workspace / "blank.ppm"), "--out", str(workspace / "p"), "--threshold", "0.999999"]) == 0
    text = (workspace / "p" / "blank.txt").read_text()
    assert text == "count=0\n"
    assert len(PointSet.from_text(text)) == 0
    assert read_pnm(workspace / "p" / "blank_overlay.ppm").shape == (3, 40, 40)


def test_predict_file_roundtrip(workspace):
    run_train(workspace, "r")
    assert main(["predict", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--image",
                 str(workspace / "ds" / "test_00000.ppm"), "--out", str(workspace / "p"),
                 "--threshold", "0.001"]) == 0
    text = (workspace / "p" / "test_00000.txt").read_text()
    ps = PointSet.from_text(text)
    assert len(ps) > 0 and ps.to_text() == text
    assert ((ps.points >= 0) & (ps.points <= 31)).all()


def test_predict_unreadable_image(workspace):
    run_train(workspace, "r")
    (workspace / "bad.ppm").write_bytes(b"not an image")
    assert main(["predict", "--checkpoint", str(workspace / "r" / "model.ckpt"), "--image",
                 str(workspace / "bad.ppm"), "--out", str(workspace / "p")]) == 3


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_exit_codes(workspace):
    (workspace / "bad.cfg").write_text("mystery=1\n")
    assert main(["train", "--config", str(workspace / "bad.cfg"), "--data", str(workspace / "ds"),
                 "--out", str(workspace / "x")]) == 4
    assert main(["train", "--data", str(workspace / "missing"), "--out", str(workspace / "x")]) == 3
    (workspace / "huge.cfg").write_text(TINY_CFG + "lr=1e30\n")
    assert main(["train", "--config", str(workspace / "huge.cfg"), "--data", str(workspace / "ds"),
                 "--out", str(workspace / "nan"), "--steps", "5"]) == 5
    assert (workspace / "nan" / "model.ckpt").exists()
    assert "aborted" in (workspace / "nan" / "train.log").read_text()
    with pytest.raises(SystemExit) as exc:
        main(["bench-scaling", "--sizes", "a,b"])
    assert exc.value.code == 2


class TestScaling:
    def test_single_size_has_empty_ratio(self):
        text = format_scaling(scaling_rows([64], toy_config(**{"stage_depths": (1, 1, 1)})))
        header, row = text.splitlines()
        assert header.split()[-1] == "flop_ratio" and len(row.split()) == 4

    def test_ratio_for_doubling(self):
        rows = scaling_rows([64, 128], toy_config(**{"stage_depths": (1, 1, 1)}))
        assert 3.6 <= rows[1][2] / rows[0][2] <= 4.4

    def test_repeated_size_identical_flops(self):
        rows = scaling_rows([64, 64], toy_config(**{"stage_depths": (1, 1, 1)}))
        assert rows[0][2] == rows[1][2]

    def test_table_aligned(self, capsys):
        assert main(["bench-scaling", "--sizes", "32,64"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len({len(ln) for ln in lines[1:]}) == 1


def test_threads_env(monkeypatch):
    monkeypatch.setenv("VSSCROWD_THREADS", "3")
    assert env_threads() == 3
    monkeypatch.setenv("VSSCROWD_THREADS", "junk")
    assert env_threads() == 1


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "vsscrowd.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "bench-scaling" in res.stdout
