"""CLI harness: subcommands, error contract, output layout, determinism."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from fedcast.cli import main

CONFIG = {
    "global": {"seed": 5, "rounds": 2, "lr": 1e-3, "dim": 16, "heads": 4,
               "patch_len": 8, "vocab": 40, "num_prototypes": 10,
               "num_prompts": 3, "max_len": 12, "depth": 1},
    "domains": [
        {"name": "alpha", "channels": 1, "splits": [60, 48, 48],
         "lookback": 16, "horizon": 4, "stride": 4, "batch_size": 8,
         "synth": {"shared": [[1 / 12, 1.0]], "own": [[1 / 9, 0.5]],
                   "noise_std": 0.1, "seed": 31}},
        {"name": "beta", "channels": 1, "splits": [60, 48, 48],
         "lookback": 16, "horizon": 4, "stride": 4, "batch_size": 8,
         "synth": {"shared": [[1 / 12, 1.0]], "own": [[1 / 7, 0.5]],
                   "noise_std": 0.1, "seed": 32}},
    ],
    "zeroshot_targets": [
        {"name": "gamma", "channels": 1, "splits": [60, 48, 48],
         "lookback": 16, "horizon": 4, "stride": 4, "batch_size": 8,
         "synth": {"shared": [[1 / 12, 1.0]], "own": [[1 / 11, 0.5]],
                   "noise_std": 0.1, "seed": 33}},
    ],
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(CONFIG))
    return path


def tree_hash(root: Path, skip=("meta.json", ".lock", "figures")):
    digest = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_dir() or any(s in p.parts or p.name == s for s in skip):
            continue
        digest.update(str(p.relative_to(root)).encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


def test_train_writes_expected_layout(config_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_path), "--out", str(out)]) == 0
    assert (out / "round_log.csv").exists()
    assert (out / "config.yaml").exists()
    assert (out / "checkpoints" / "best.ckpt").exists()
    assert (out / "meta.json").exists()
    assert (out / "figures" / "validation_loss.png").exists()
    assert not (out / ".lock").exists()
    header = (out / "round_log.csv").read_text().splitlines()[0]
    assert header == "round,client,train_loss,val_loss,avg_val_loss,comm_bytes"
    assert "train:" in capsys.readouterr().out


def test_train_deterministic_under_seed(config_path, tmp_path):
    out1, out2, out3 = (tmp_path / n for n in ("r1", "r2", "r3"))
    main(["train", "--config", str(config_path), "--out", str(out1)])
    main(["train", "--config", str(config_path), "--out", str(out2)])
    main(["train", "--config", str(config_path), "--out", str(out3), "--seed", "9"])
    assert tree_hash(out1) == tree_hash(out2)
    assert tree_hash(out1) != tree_hash(out3)


def test_eval_self_consistent_with_round_log(config_path, tmp_path):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(run_dir)])
    eval_dir = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(run_dir / "checkpoints" / "best.ckpt"),
                 "--out", str(eval_dir), "--split", "val"])
    assert code == 0
    report = json.loads((eval_dir / "metrics.json").read_text())
    meta = json.loads((run_dir / "meta.json").read_text())
    per_domain = [report["domain_average"][d]["mse"] for d in ("alpha", "beta")]
    assert np.mean(per_domain) == pytest.approx(meta["best_avg_val"], abs=1e-12)


def test_missing_config_key_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"global": {}}))
    code = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_lockfile_blocks_concurrent_use(config_path, tmp_path, capsys):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("123")
    code = main(["train", "--config", str(config_path), "--out", str(out)])
    assert code == 2
    assert "locked" in capsys.readouterr().err


def test_fewshot_writes_reports(config_path, tmp_path):
    out = tmp_path / "few"
    code = main(["fewshot", "--config", str(config_path), "--out", str(out),
                 "--fraction", "1.0"])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "metrics.json").exists()


def test_fewshot_fraction_validated(config_path, tmp_path, capsys):
    code = main(["fewshot", "--config", str(config_path),
                 "--out", str(tmp_path / "x"), "--fraction", "1.5"])
    assert code == 2
    assert "fraction" in capsys.readouterr().err


def test_zeroshot_emits_chosen_source_column(config_path, tmp_path):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(run_dir)])
    z_dir = tmp_path / "zero"
    code = main(["zeroshot", "--checkpoint",
                 str(run_dir / "checkpoints" / "best.ckpt"),
                 "--out", str(z_dir)])
    assert code == 0
    header = (z_dir / "metrics.csv").read_text().splitlines()
    assert header[0] == "domain,horizon,mse,mae,source"
    assert header[1].split(",")[0] == "gamma"
    assert header[1].split(",")[-1] in ("alpha", "beta")
    selection = json.loads((z_dir / "zeroshot_selection.json").read_text())
    assert "gamma" in selection["chosen_sources"]


def test_incompatible_checkpoint_version_error(config_path, tmp_path, capsys):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(run_dir)])
    ckpt_path = run_dir / "checkpoints" / "best.ckpt"
    doc = json.loads(ckpt_path.read_text())
    doc["format_version"] = 42
    ckpt_path.write_text(json.dumps(doc))
    code = main(["eval", "--checkpoint", str(ckpt_path),
                 "--out", str(tmp_path / "e")])
    assert code == 2
    assert "version" in capsys.readouterr().err


def test_inspect_prompts_bundle(config_path, tmp_path):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(run_dir)])
    ins = tmp_path / "inspect"
    code = main(["inspect-prompts", "--checkpoint",
                 str(run_dir / "checkpoints" / "best.ckpt"),
                 "--out", str(ins), "--sample-index", "0"])
    assert code == 0
    for domain in ("alpha", "beta"):
        for h in range(4):
            scores = np.loadtxt(ins / f"scores_{domain}_head{h}.csv", delimiter=",")
            assert scores.shape == (10, 3)  # prototypes x patches
            assert np.allclose(scores.sum(axis=0), 1.0, atol=1e-9)
            selected = (ins / f"selected_{domain}_head{h}.csv").read_text().splitlines()
            assert len(selected) == 1 + 3  # header + M rows
    overlap = (ins / "prototype_overlap.csv").read_text().splitlines()
    assert overlap[0] == "domain_a,domain_b,jaccard"
    diag = [l for l in overlap[1:] if l.split(",")[0] == l.split(",")[1]]
    assert all(float(l.split(",")[2]) == 1.0 for l in diag)
    assert (ins / "figures" / "prototype_overlap.png").exists()


def test_inspect_prompts_bad_index(config_path, tmp_path, capsys):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(run_dir)])
    code = main(["inspect-prompts", "--checkpoint",
                 str(run_dir / "checkpoints" / "best.ckpt"),
                 "--out", str(tmp_path / "i2"), "--sample-index", "99999"])
    assert code == 2
    assert "out of range" in capsys.readouterr().err


def test_synth_gen_round_trip(config_path, tmp_path):
    out = tmp_path / "gen"
    code = main(["synth-gen", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    assert (out / "alpha.csv").exists() and (out / "beta.csv").exists()
    header = (out / "alpha.csv").read_text().splitlines()[0]
    assert header.startswith("date,")


def test_train_ablation_flag_plumbs_through(config_path, tmp_path):
    out = tmp_path / "ab"
    code = main(["train", "--config", str(config_path), "--out", str(out),
                 "--ablation", "no-prompt"])
    assert code == 0
    snapshot = yaml.safe_load((out / "config.yaml").read_text())
    assert snapshot["global"]["ablation"] == "no-prompt"
