import csv
import hashlib
import subprocess
import sys

import pytest

from dcen.cli import main

from conftest import CONFIGS

SMOKE = str(CONFIGS / "smoke.yaml")


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode() + p.read_bytes())
    return h.hexdigest()


def _err_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--config", SMOKE, "--out", str(out)]) == 0
    return out


def test_synth_writes_a_stable_dataset(tmp_path):
    assert main(["synth", "--config", SMOKE, "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", SMOKE, "--out", str(tmp_path / "b")]) == 0
    names = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"attributes.csv", "split.txt", "data"} <= names
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert main(["synth", "--config", SMOKE, "--seed", "4", "--out", str(tmp_path / "c")]) == 0
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_synth_invalid_config_names_the_invariant(tmp_path, capsys):
    code = main(["synth", "--config", SMOKE, "--set", "synth.num_seen=1", "--out", str(tmp_path)])
    assert code == 1
    line = _err_line(capsys)
    assert line.startswith("dcen-error[ValueError]:") and "num_seen" in line


def test_train_outputs(trained):
    for name in ("final.ckpt", "metrics.csv", "report.txt", "report.csv", "report.json"):
        assert (trained / name).exists(), name
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert len(rows) == 10


def test_basic_mode_logs_zero_instance_loss(tmp_path):
    assert main(["train", "--config", SMOKE, "--set", "train.mode=basic_zsl", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert rows and all(float(r["l_id"]) == 0.0 for r in rows)


def test_train_from_saved_dataset_matches_generated(tmp_path, trained):
    assert main(["synth", "--config", SMOKE, "--out", str(tmp_path / "ds")]) == 0
    assert main(["train", "--config", SMOKE, "--data", str(tmp_path / "ds"), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()


def test_eval_is_deterministic(trained, tmp_path, capsys):
    ckpt = str(trained / "final.ckpt")
    assert main(["eval", ckpt, "--config", SMOKE, "--out", str(tmp_path / "a")]) == 0
    assert main(["eval", ckpt, "--config", SMOKE, "--out", str(tmp_path / "b")]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_text() == (trained / "report.json").read_text()
    assert "MCA_u" in capsys.readouterr().out


def test_eval_fresh_checkpoint(tmp_path):
    assert main(["train", "--config", SMOKE, "--set", "train.steps=0", "--out", str(tmp_path)]) == 0
    assert main(["eval", str(tmp_path / "final.ckpt"), "--config", SMOKE]) == 0


def test_eval_tampered_checkpoint(trained, tmp_path, capsys):
    blob = bytearray((trained / "final.ckpt").read_bytes())
    blob[30] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(blob))
    assert main(["eval", str(tmp_path / "bad.ckpt"), "--config", SMOKE]) == 1
    assert _err_line(capsys).startswith("dcen-error[CheckpointFormatError]:")


@pytest.mark.parametrize("override,word", [("synth.attr_dim=7", "attr_dim"),
                                           ("synth.image_size=24", "shape")])
def test_eval_dimension_mismatch(trained, override, word, capsys):
    code = main(["eval", str(trained / "final.ckpt"), "--config", SMOKE, "--set", override])
    assert code == 1
    line = _err_line(capsys)
    assert line.startswith("dcen-error[DimensionMismatchError]:") and word in line


def test_sweep_command(tmp_path):
    spec = tmp_path / "sw.yaml"
    spec.write_text(f"param: lambda1\nvalues: [0.0, 1.0]\nrepeats: 1\nbase_config: {SMOKE}\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(spec), "--set", "train.steps=2", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out / "sweep_lambda1.csv")))) == 2
    assert (out / "sweep_lambda1.png").exists()


def test_sweep_without_spec_is_a_usage_error(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path)]) == 2
    assert _err_line(capsys).startswith("dcen-error[UsageError]:")


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 1
    assert _err_line(capsys).startswith("dcen-error[FileNotFoundError]:")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dcen", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train", "eval", "sweep"):
        assert cmd in res.stdout
