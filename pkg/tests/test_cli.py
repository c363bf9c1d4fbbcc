import csv
import json

import numpy as np
import pytest

from visu import cli
from visu.ogs import read_manifest
from visu.trainer import load_checkpoint

TINY_FLAGS = ["--model-patch-w", "8", "--model-patch-h", "8", "--model-dim", "16", "--model-heads", "2",
              "--model-depth", "1", "--model-seq-len", "4", "--batch-labeled", "4", "--batch-unlabeled", "4"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "lex.txt").write_text("12\n345\n7\n\n", encoding="utf-8")
    common = ["--lexicon", str(d / "lex.txt"), "--width", "64", "--height", "32", "--charset", "digits",
              "--max-len", "4"]
    assert cli.main(["gen", *common, "--count", "12", "--out", str(d / "lab"), "--seed", "1"]) == 0
    assert cli.main(["gen", *common, "--count", "12", "--out", str(d / "unl"), "--seed", "2", "--distort"]) == 0
    return d


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["gradcheck", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["gen", "gradcheck", "dynamics", "train", "eval", "export-embeddings", "smoke"])
def test_help_for_every_subcommand(cmd, capsys):
    assert cli.main([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_gen_writes_manifest(workdir):
    recs = read_manifest(workdir / "lab")
    assert len(recs) == 12 and {r.label for r in recs} <= {"12", "345", "7"}
    assert all(r.image.shape == (32, 64) for r in recs)


def test_gen_rejects_bad_lexicon(tmp_path, capsys):
    (tmp_path / "lex.txt").write_text("ab\n")
    rc = cli.main(["gen", "--lexicon", str(tmp_path / "lex.txt"), "--count", "2", "--out", str(tmp_path / "o"),
                   "--charset", "digits"])
    assert rc == 1 and "invalid input" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--trials", "3", "--eps", "1e-6", "--tol", "1e-6"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_dynamics_command_rows(tmp_path, capsys):
    out = tmp_path / "run.csv"
    rc = cli.main(["dynamics", "--loss", "cua", "--classes", "3", "--points", "4", "--steps", "25", "--lr", "0.1",
                   "--seed", "1", "--out", str(out)])
    assert rc == 0
    assert len(list(csv.reader(open(out)))) == 1 + 26
    assert "more compact" in capsys.readouterr().out


def test_train_eval_export_flow(workdir, capsys, tmp_path):
    run = workdir / "run"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 6, "lam": 0.3, "seed": 4}))
    rc = cli.main(["train", "--config", str(cfg), "--labeled", str(workdir / "lab"), "--unlabeled",
                   str(workdir / "unl"), "--out", str(run), "--lam", "0.2", "--checkpoint-every", "3", *TINY_FLAGS])
    assert rc == 0, capsys.readouterr().err
    state = load_checkpoint(run / "checkpoint.bin")
    assert state.step == 6
    assert state.config.lam == 0.2 and state.config.seed == 4  # flag beats file, file beats default
    assert state.config.model.dim == 16
    lines = (run / "log.jsonl").read_text().splitlines()
    assert [json.loads(x)["step"] for x in lines] == list(range(6))
    capsys.readouterr()

    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(workdir / "lab")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["samples"] == 12 and 0.0 <= rep["word_accuracy"] <= 1.0

    out = tmp_path / "emb.csv"
    assert cli.main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data",
                     str(workdir / "lab"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][:4] == ["sample_id", "position", "label", "conf"] and len(rows[0]) == 4 + 16
    assert len(rows) - 1 == sum(len(r.label) for r in read_manifest(workdir / "lab"))


def test_train_resume_continues(workdir, tmp_path):
    args = ["train", "--labeled", str(workdir / "lab"), "--steps", "4", *TINY_FLAGS]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b"), "--steps", "2"]) == 0
    # resuming keeps the checkpoint's config (steps=2), so nothing more runs
    assert cli.main(["train", "--labeled", str(workdir / "lab"), "--out", str(tmp_path / "b"),
                     "--resume", str(tmp_path / "b" / "checkpoint.bin")]) == 0
    assert load_checkpoint(tmp_path / "b" / "checkpoint.bin").step == 2


def test_train_bad_config_value(workdir, tmp_path, capsys):
    rc = cli.main(["train", "--labeled", str(workdir / "lab"), "--out", str(tmp_path / "x"), "--align-loss", "cc9",
                   *TINY_FLAGS])
    assert rc == 1


def test_train_unknown_config_field(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"warp_speed": 9}')
    assert cli.main(["train", "--config", str(cfg), "--labeled", str(workdir / "lab"), "--out",
                     str(tmp_path / "x")]) == 1


def test_eval_missing_checkpoint_is_runtime_error(workdir, tmp_path, capsys):
    rc = cli.main(["eval", "--checkpoint", str(tmp_path / "nope.bin"), "--data", str(workdir / "lab")])
    assert rc == 2
    assert "nope.bin" in capsys.readouterr().err


def test_corrupt_checkpoint_is_validation_error(workdir, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x05\x00\x00\x00\x00\x00\x00\x00{oops")
    assert cli.main(["eval", "--checkpoint", str(bad), "--data", str(workdir / "lab")]) == 1


def test_export_empty_dataset(workdir, tmp_path):
    from visu.ogs import write_manifest

    write_manifest([], tmp_path / "empty")
    run = tmp_path / "r"
    assert cli.main(["train", "--labeled", str(workdir / "lab"), "--out", str(run), "--steps", "1",
                     *TINY_FLAGS]) == 0
    out = tmp_path / "e.csv"
    assert cli.main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data",
                     str(tmp_path / "empty"), "--out", str(out)]) == 0
    assert out.read_text().count("\n") == 1
    again = tmp_path / "e2.csv"
    cli.main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(workdir / "lab"),
              "--out", str(out)])
    cli.main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(workdir / "lab"),
              "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_smoke_command_wiring(monkeypatch, tmp_path, capsys):
    import visu.toydata as td

    monkeypatch.setattr(td, "smoke_splits", lambda seed: None)
    monkeypatch.setattr(td, "run_smoke", lambda kind, seed, splits, steps: {
        "kind": kind, "seed": seed, "clean": 0.9, "distorted": 0.5 if kind == "visu" else 0.4})
    out = tmp_path / "smoke.json"
    assert cli.main(["smoke", "--seeds", "1", "2", "--steps", "5", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())) == 2
    assert capsys.readouterr().out.count("seed") == 2


def test_module_entry_point_exit_codes():
    import subprocess
    import sys

    ok = subprocess.run([sys.executable, "-m", "visu.cli", "gradcheck", "--trials", "1"], capture_output=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "visu.cli", "frobnicate"], capture_output=True)
    assert bad.returncode == 1
