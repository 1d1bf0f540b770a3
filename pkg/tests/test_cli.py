import hashlib
import json
import os

import numpy as np
import pytest

from vgt.cli import main
from vgt.config import RunConfig, parse_config


# -- config parsing -------------------------------------------------------------

def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_empty_config_is_all_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""))
    assert cfg == RunConfig()
    assert (cfg.patch, cfg.grid_channels, cfg.tau, cfg.n_segments,
            cfg.mask_ratio) == (16, 64, 0.01, 64, 0.15)


def test_config_parses_values_and_comments(tmp_path):
    cfg = parse_config(write(tmp_path, """
# run settings
tau = 0.02
steps = 50     # short run
streams = grid
"""))
    assert cfg.tau == 0.02
    assert cfg.steps == 50
    assert cfg.streams == "grid"


def test_config_unknown_key_names_key_and_line(tmp_path):
    with pytest.raises(ValueError, match=r"line 2.*'taus'"):
        parse_config(write(tmp_path, "\ntaus = 0.01\n"))


def test_config_type_mismatch_names_key_and_line(tmp_path):
    with pytest.raises(ValueError, match=r"line 1.*'steps'"):
        parse_config(write(tmp_path, "steps = many\n"))


def test_config_rejects_bad_divisibility(tmp_path):
    with pytest.raises(ValueError, match="divisible"):
        parse_config(write(tmp_path, "patch = 12\n"))
    with pytest.raises(ValueError, match="multiple of 4"):
        parse_config(write(tmp_path, "image_size = 66\npatch = 6\n"))


def test_config_rejects_missing_paths(tmp_path):
    with pytest.raises(ValueError, match="data_dir"):
        parse_config(write(tmp_path, "data_dir = /no/such/dir\n"))


def test_config_rejects_bad_ratio_and_temperature(tmp_path):
    with pytest.raises(ValueError, match="mask_ratio"):
        parse_config(write(tmp_path, "mask_ratio = 1.5\n"))
    with pytest.raises(ValueError, match="tau"):
        parse_config(write(tmp_path, "tau = 0\n"))


def test_config_rejects_lines_without_assignment(tmp_path):
    with pytest.raises(ValueError, match="line 1"):
        parse_config(write(tmp_path, "just some words\n"))


# -- CLI ------------------------------------------------------------------------

SMALL = """
image_size = 32
patch = 8
layers = 1
heads = 2
hidden = 8
mlp = 16
grid_channels = 8
vocab_size = 16
target_dim = 8
steps = 2
batch_size = 2
pages = 3
warmup_steps = 1
"""


def dir_hash(path):
    digest = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        digest.update(name.encode())
        with open(os.path.join(path, name), "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def run(args):
    return main(args)


def test_synth_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert run(["synth", "--config", cfg, "--seed", "7",
                    "--out", str(tmp_path / d)]) == 0
    assert dir_hash(tmp_path / "a") == dir_hash(tmp_path / "b")


def test_synth_seed_changes_output(tmp_path):
    cfg = write(tmp_path, SMALL)
    run(["synth", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a")])
    run(["synth", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b")])
    assert dir_hash(tmp_path / "a") != dir_hash(tmp_path / "b")


def test_grid_dump_writes_csv_and_png(tmp_path):
    cfg = write(tmp_path, SMALL)
    corpus = str(tmp_path / "corpus")
    run(["synth", "--config", cfg, "--seed", "3", "--out", corpus])
    out = str(tmp_path / "dump")
    assert run(["grid-dump", os.path.join(corpus, "page_0000.json"),
                "--vocab", os.path.join(corpus, "vocab.txt"),
                "--config", cfg, "--out", out]) == 0
    ids = np.loadtxt(os.path.join(out, "page_0000_grid.csv"),
                     delimiter=",", dtype=int)
    assert ids.shape == (32, 32)
    assert os.path.exists(os.path.join(out, "page_0000_grid.png"))


def test_pretrain_train_eval_pipeline(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    corpus = str(tmp_path / "corpus")
    assert run(["synth", "--config", cfg, "--seed", "5", "--out", corpus]) == 0

    pre = str(tmp_path / "pre")
    assert run(["pretrain", "--config", cfg, "--seed", "5",
                "--data", corpus, "--out", pre]) == 0
    assert os.path.exists(os.path.join(pre, "pretrain.ckpt"))
    assert os.path.exists(os.path.join(pre, "pretrain_log.csv"))

    tr = str(tmp_path / "tr")
    assert run(["train", "--config", cfg, "--seed", "5", "--data", corpus,
                "--out", tr, "--init", os.path.join(pre, "pretrain.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "loaded" in out
    assert os.path.exists(os.path.join(tr, "detector.ckpt"))

    ev = str(tmp_path / "ev")
    assert run(["eval", "--config", cfg, "--seed", "5", "--data", corpus,
                "--out", ev, "--ckpt", os.path.join(tr, "detector.ckpt")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(metrics) >= {"map", "ap50", "ap75", "per_class"}
    assert os.path.exists(os.path.join(ev, "results.json"))


def test_pretrain_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL)
    corpus = str(tmp_path / "corpus")
    run(["synth", "--config", cfg, "--seed", "9", "--out", corpus])
    for d in ("p1", "p2"):
        assert run(["pretrain", "--config", cfg, "--seed", "9",
                    "--data", corpus, "--out", str(tmp_path / d)]) == 0
    assert dir_hash(tmp_path / "p1") == dir_hash(tmp_path / "p2")


def test_train_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL)
    corpus = str(tmp_path / "corpus")
    run(["synth", "--config", cfg, "--seed", "4", "--out", corpus])
    for d in ("t1", "t2"):
        assert run(["train", "--config", cfg, "--seed", "4",
                    "--data", corpus, "--out", str(tmp_path / d)]) == 0
    assert dir_hash(tmp_path / "t1") == dir_hash(tmp_path / "t2")


def test_cli_reports_errors_with_nonzero_exit(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert run(["pretrain", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
    assert "error:" in capsys.readouterr().err
    assert run(["synth", "--config", write(tmp_path, "steps = nah\n", "bad.cfg"),
                "--out", str(tmp_path / "y")]) == 1
