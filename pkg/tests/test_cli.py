"""End-to-end command line flows: generate, train, evaluate, complete,
verify, plus the exit-code contract (0 ok, 1 failure, 2 usage)."""

import numpy as np
import pytest

from pcfill import cli
from pcfill.data import dataset


@pytest.fixture(scope="module")
def ds_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws") / "ds"
    rc = cli.main(["gen-data", str(root), "--per-category", "1",
                   "--eval-per-category", "1", "--points", "128",
                   "--image-size", "16", "--views", "2", "--seed", "1",
                   "--quiet"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, ds_root):
    out = tmp_path_factory.mktemp("cliws") / "run"
    rc = cli.main(["train", "--data", str(ds_root), "--out", str(out),
                   "--preset", "micro", "--points", "128", "--epochs", "2",
                   "--seed", "3", "--deterministic", "--log-every", "1",
                   "--quiet"])
    assert rc == 0
    return out


def test_gen_data_writes_dataset(ds_root):
    meta, records = dataset.read_manifest(ds_root / "manifest.txt")
    assert meta["seed"] == "1"
    assert len(records) == 2 * 4 * 2


def test_gen_data_refuses_existing_root(ds_root, capsys):
    rc = cli.main(["gen-data", str(ds_root), "--per-category", "1"])
    assert rc == 1
    assert "force" in capsys.readouterr().err


def test_train_artifacts(run_dir):
    assert (run_dir / "checkpoint.bin").is_file()
    lines = (run_dir / "metrics.csv").read_text().splitlines()
    assert lines[2].startswith("epoch,iter,")
    assert len(lines) == 3 + 4  # 2 epochs x 2 steps, logged every step


def test_train_resume_roundtrip(ds_root, run_dir, tmp_path):
    rc = cli.main(["train", "--data", str(ds_root), "--out", str(run_dir),
                   "--preset", "micro", "--points", "128", "--epochs", "2",
                   "--seed", "3", "--deterministic", "--resume", "--quiet"])
    assert rc == 0  # nothing left to do, still succeeds


def test_eval_report(ds_root, run_dir, tmp_path, capsys):
    report = tmp_path / "report.csv"
    rc = cli.main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                   "--data", str(ds_root), "--split", "eval", "--limit", "3",
                   "--report", str(report), "--per-view-std", "--quiet"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "evaluated 3 records" in out
    assert "cd_out_std" in out
    lines = report.read_text().splitlines()
    assert lines[0].startswith("#")
    assert "config_hash" in lines[1]
    assert lines[2] == "category,object,view,cd_coarse,cd_out,fscore"
    assert len([l for l in lines if not l.startswith("#")]) == 4  # header + 3
    assert lines[-1].startswith("# summary")


def test_complete_writes_clouds(ds_root, run_dir, tmp_path, capsys):
    obj = ds_root / "eval" / "table" / "0000"
    out = tmp_path / "done.xyz"
    coarse = tmp_path / "coarse.xyz"
    rc = cli.main(["complete", "--checkpoint", str(run_dir / "checkpoint.bin"),
                   "--partial", str(obj / "partial_00.xyz"),
                   "--image", str(obj / "view_00.img"),
                   "--camera", str(obj / "cam_00.txt"),
                   "--out", str(out), "--emit-coarse", str(coarse)])
    assert rc == 0
    pts = dataset.read_xyz(out)
    assert pts.shape == (16, 3)  # micro: 2 surfaces x 8 grid points
    assert dataset.read_xyz(coarse).shape == (16, 3)
    header = out.read_text().splitlines()[0]
    assert header.startswith("#") and "config_hash" in header


def test_complete_requires_image_inputs(ds_root, run_dir, tmp_path, capsys):
    obj = ds_root / "eval" / "table" / "0000"
    rc = cli.main(["complete", "--checkpoint", str(run_dir / "checkpoint.bin"),
                   "--partial", str(obj / "partial_00.xyz"),
                   "--out", str(tmp_path / "x.xyz")])
    assert rc == 1
    assert "--image" in capsys.readouterr().err


def test_missing_checkpoint_fails_cleanly(ds_root, capsys):
    rc = cli.main(["eval", "--checkpoint", "/nonexistent.bin",
                   "--data", str(ds_root)])
    assert rc == 1
    assert "cannot read checkpoint" in capsys.readouterr().err


def test_train_dataset_mismatch_fails(ds_root, tmp_path, capsys):
    rc = cli.main(["train", "--data", str(ds_root), "--out",
                   str(tmp_path / "r"), "--preset", "micro", "--epochs", "1",
                   "--quiet"])
    assert rc == 1  # micro preset expects 16 points, dataset has 128
    assert "n_points" in capsys.readouterr().err


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen-data", "/tmp/x"])  # missing --per-category
    assert exc.value.code == 2


def test_verify_passes(capsys):
    rc = cli.main(["verify", "--quiet"])
    assert rc == 0
    assert "all checks passed" in capsys.readouterr().out


def test_gen_data_seed_reproducible(tmp_path):
    for name in ("a", "b"):
        rc = cli.main(["gen-data", str(tmp_path / name), "--per-category", "1",
                       "--points", "128", "--image-size", "16", "--views",
                       "1", "--seed", "9", "--quiet"])
        assert rc == 0
    ma = (tmp_path / "a" / "manifest.txt").read_text()
    mb = (tmp_path / "b" / "manifest.txt").read_text()
    assert ma == mb
    ga = (tmp_path / "a" / "train" / "car" / "0000" / "gt.xyz").read_bytes()
    gb = (tmp_path / "b" / "train" / "car" / "0000" / "gt.xyz").read_bytes()
    assert ga == gb
