"""Command-line harness.

Subcommands: train, eval, fewshot, zeroshot, inspect-prompts, synth-gen.
Every run owns its output directory (guarded by a lockfile), drops a config
snapshot plus CSV/JSON outputs there, and renders figures alongside them.
Wall-clock timing lives only in meta.json, so everything else is
byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint as ckpt
from . import config as cfgmod
from . import data as dat
from . import encoder as enc
from . import evaluation as ev
from . import federation as fed
from . import reports
from . import synth
from .autodiff import no_grad
from .errors import FedcastError

LOCK_NAME = ".lock"


class OutputDir:
    """Create/claim an output directory; one process at a time via lockfile."""

    def __init__(self, path):
        self.path = Path(path)
        self.lock = self.path / LOCK_NAME

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        if self.lock.exists():
            raise FedcastError(
                f"output dir '{self.path}' is locked by another run "
                f"(remove {self.lock} if stale)")
        self.lock.write_text(str(os.getpid()), encoding="utf-8")
        (self.path / "figures").mkdir(exist_ok=True)
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False


def _load_config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load_config(args.config)
    return cfgmod.with_overrides(cfg, seed=getattr(args, "seed", None),
                                 ablation=getattr(args, "ablation", None),
                                 tuning=getattr(args, "tuning", None),
                                 depth=getattr(args, "depth", None))


def _snapshot_config(cfg, out: Path) -> None:
    (out / "config.yaml").write_text(
        yaml.safe_dump(cfgmod.to_dict(cfg), sort_keys=True), encoding="utf-8")


def _write_meta(out: Path, started: float, extra=None) -> None:
    meta = {"started_unix": started, "elapsed_seconds": time.time() - started}
    if extra:
        meta.update(extra)
    reports.write_json(meta, out / "meta.json")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    base_dir = Path(args.config).resolve().parent
    started = time.time()
    with OutputDir(args.out) as out:
        _snapshot_config(cfg, out)
        trained = fed.run(cfg, base_dir=base_dir)
        reports.write_round_log(trained.records, out / "round_log.csv")
        (out / "checkpoints").mkdir(exist_ok=True)
        ckpt.save_checkpoint(out / "checkpoints" / "best.ckpt", trained)
        reports.save_training_curve(trained.records, out / "figures" / "validation_loss.png")
        _write_meta(out, started, {"best_round": trained.best_round,
                                   "best_avg_val": trained.best_avg_val})
    print(f"train: {len(trained.records)} rounds, best round "
          f"{trained.best_round} (avg val {trained.best_avg_val:.6f})")
    print(f"train: outputs in {out}")
    return 0


def _eval_family(args, protocol: str) -> int:
    trained = ckpt.load_checkpoint(args.checkpoint)
    if args.config is not None:
        cfg = _load_config(args)
        base_dir = Path(args.config).resolve().parent
    else:
        cfg = trained.config
        base_dir = Path.cwd()
    started = time.time()
    trained = _retarget(trained, cfg)
    with OutputDir(args.out) as out:
        _snapshot_config(cfg, out)
        if protocol == "eval":
            report = ev.evaluate_artifacts(trained, args.split, base_dir)
            extra = {"split": args.split}
        else:
            targets = cfg.zeroshot_targets
            result = ev.zeroshot_protocol(trained, targets, base_dir)
            report = result.report
            reports.write_json({"chosen_sources": result.chosen,
                                "candidate_val_mse": result.candidate_val_mse},
                               out / "zeroshot_selection.json")
            extra = {"chosen_sources": result.chosen}
        reports.write_metric_csv(report, out / "metrics.csv")
        reports.write_metric_json(report, out / "metrics.json")
        reports.save_metric_bars(report, out / "figures" / "metrics.png")
        _write_meta(out, started, extra)
    mse, mae = report.overall_average()
    print(f"{protocol}: overall MSE {mse:.6f}, MAE {mae:.6f}; outputs in {out}")
    return 0


def _retarget(trained, cfg) -> fed.TrainedArtifacts:
    """Re-bind a loaded checkpoint to a (possibly overriding) config."""
    loaded = trained.config.global_cfg
    arch_keys = ("dim", "heads", "patch_len", "vocab", "num_prototypes",
                 "num_prompts", "depth", "tuning_mode", "ablation")
    mismatched = [k for k in arch_keys
                  if getattr(loaded, k) != getattr(cfg.global_cfg, k)]
    if mismatched:
        raise FedcastError(
            f"checkpoint architecture differs from config on {mismatched}")
    trained.config = cfg
    return trained


def cmd_eval(args) -> int:
    return _eval_family(args, "eval")


def cmd_zeroshot(args) -> int:
    return _eval_family(args, "zeroshot")


def cmd_fewshot(args) -> int:
    cfg = _load_config(args)
    base_dir = Path(args.config).resolve().parent
    started = time.time()
    with OutputDir(args.out) as out:
        _snapshot_config(cfg, out)
        result = ev.fewshot_protocol(cfg, args.fraction, base_dir)
        reports.write_round_log(result.trained.records, out / "round_log.csv")
        (out / "checkpoints").mkdir(exist_ok=True)
        ckpt.save_checkpoint(out / "checkpoints" / "best.ckpt", result.trained)
        reports.write_metric_csv(result.report, out / "metrics.csv")
        reports.write_metric_json(result.report, out / "metrics.json")
        reports.save_metric_bars(result.report, out / "figures" / "metrics.png")
        reports.save_training_curve(result.trained.records,
                                    out / "figures" / "validation_loss.png")
        _write_meta(out, started, {"fraction": args.fraction,
                                   "excluded": result.report.excluded})
    mse, mae = result.report.overall_average()
    print(f"fewshot({args.fraction}): overall MSE {mse:.6f}, MAE {mae:.6f}; "
          f"excluded: {result.report.excluded or 'none'}; outputs in {out}")
    return 0


def cmd_inspect_prompts(args) -> int:
    trained = ckpt.load_checkpoint(args.checkpoint)
    if args.config is not None:
        cfg = _load_config(args)
        base_dir = Path(args.config).resolve().parent
        trained = _retarget(trained, cfg)
    else:
        cfg = trained.config
        base_dir = Path.cwd()
    g = cfg.global_cfg
    if g.effective_prompts == 0:
        raise FedcastError("prompt inspection needs a prompt-enabled checkpoint")
    started = time.time()
    with OutputDir(args.out) as out:
        selected_union = {}
        for i, spec in enumerate(cfg.domains, start=1):
            ds = cfgmod.build_dataset(spec, g, domain_id=i, base_dir=base_dir)
            windows = dat.extract_windows(ds, args.split)
            if not 0 <= args.sample_index < len(windows):
                raise FedcastError(
                    f"{spec.name}: sample index {args.sample_index} out of "
                    f"range [0, {len(windows)})")
            sample = dat.instance_normalize(windows[args.sample_index])
            patches = dat.make_patches(sample.values, g.patch_len, spec.stride)
            encoder = trained.encoder_for(spec.name)
            backbone = trained.backbone_for(spec.name)
            with no_grad():
                ctx = enc.make_context(encoder, backbone.embedding)
                _, _, selection = enc.encode(patches.patches, encoder, ctx,
                                             g.effective_prompts)
            selected_union[spec.name] = selection.selected_union()
            _dump_selection(out, spec.name, selection)
        _dump_overlap(out, selected_union)
        _write_meta(out, started, {"sample_index": args.sample_index,
                                   "split": args.split})
    print(f"inspect-prompts: wrote per-head score bundles for "
          f"{len(cfg.domains)} domain(s) to {out}")
    return 0


def _dump_selection(out: Path, domain: str, selection) -> None:
    for h, head in enumerate(selection.heads):
        np.savetxt(out / f"scores_{domain}_head{h}.csv", head.scores,
                   delimiter=",", fmt="%.17g")
        np.savetxt(out / f"totals_{domain}_head{h}.csv", head.totals,
                   delimiter=",", fmt="%.17g")
        with open(out / f"selected_{domain}_head{h}.csv", "w",
                  encoding="utf-8", newline="") as fh:
            fh.write("rank,prototype\n")
            for rank, idx in enumerate(head.indices):
                fh.write(f"{rank},{idx}\n")
        reports.save_score_heatmap(head.scores,
                                   out / "figures" / f"scores_{domain}_head{h}.png",
                                   title=f"{domain} / head {h}")


def _dump_overlap(out: Path, selected_union: dict) -> None:
    names = sorted(selected_union)
    matrix = np.zeros((len(names), len(names)))
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            sa, sb = selected_union[a], selected_union[b]
            union = sa | sb
            matrix[i, j] = len(sa & sb) / len(union) if union else 1.0
    with open(out / "prototype_overlap.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("domain_a,domain_b,jaccard\n")
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                fh.write(f"{a},{b},{float(matrix[i, j])!r}\n")
    reports.save_overlap_heatmap(matrix, names, out / "figures" / "prototype_overlap.png")


def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    g = cfg.global_cfg
    started = time.time()
    with OutputDir(args.out) as out:
        written = []
        for i, spec in enumerate(cfg.domains, start=1):
            if spec.synth is None:
                continue
            ds = cfgmod.generate_from_spec(spec, g, domain_id=i)
            path = out / f"{spec.name}.csv"
            synth.write_csv(ds, path)
            written.append(path.name)
        if not written:
            raise FedcastError("config contains no synthetic domains")
        _write_meta(out, started, {"written": written})
    print(f"synth-gen: wrote {', '.join(written)} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcast",
        description="Federated cross-domain time-series forecasting harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True, needs_checkpoint=False):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment YAML")
        else:
            p.add_argument("--config", default=None, help="experiment YAML "
                           "(defaults to the checkpoint's embedded config)")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="trained checkpoint")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--ablation", choices=["no-prompt", "shared-head", "no-agg"],
                       default=None)
        p.add_argument("--tuning", choices=["freeze", "fpt", "full"], default=None)
        p.add_argument("--depth", type=int, default=None)

    common(sub.add_parser("train", help="run the federated training protocol"))

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    common(p, needs_config=False, needs_checkpoint=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = sub.add_parser("fewshot", help="train on a leading fraction of each train split")
    common(p)
    p.add_argument("--fraction", type=float, required=True,
                   help="fraction of training steps to keep, e.g. 0.1 or 0.05")

    p = sub.add_parser("zeroshot", help="transfer trained parameters to held-out targets")
    common(p, needs_config=False, needs_checkpoint=True)

    p = sub.add_parser("inspect-prompts", help="export prototype score bundles")
    common(p, needs_config=False, needs_checkpoint=True)
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    common(sub.add_parser("synth-gen", help="write synthetic domains as CSV files"))
    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "fewshot": cmd_fewshot,
    "zeroshot": cmd_zeroshot,
    "inspect-prompts": cmd_inspect_prompts,
    "synth-gen": cmd_synth_gen,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FedcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
