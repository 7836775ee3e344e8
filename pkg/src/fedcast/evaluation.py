"""Metrics and the standard / few-shot / zero-shot evaluation protocols."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np

from . import data as dat
from . import model as mdl
from .checkpoint import artifact_groups, group_checksum
from .config import DomainSpec, ExperimentConfig, build_dataset, with_overrides
from .errors import ProtocolError, TransferError
from .federation import TrainedArtifacts, isolate_run, run


@dataclass
class MetricRecord:
    domain: str
    horizon: int
    mse: float
    mae: float
    source: str | None = None  # zero-shot provenance


@dataclass
class MetricReport:
    records: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # domains skipped (few-shot '-')

    def add(self, record: MetricRecord) -> None:
        self.records.append(record)

    def domain_average(self) -> dict:
        """Per-domain (mse, mae) averaged over that domain's horizon records."""
        grouped: dict[str, list[MetricRecord]] = {}
        for r in self.records:
            grouped.setdefault(r.domain, []).append(r)
        return {d: (float(np.mean([r.mse for r in rs])),
                    float(np.mean([r.mae for r in rs])))
                for d, rs in grouped.items()}

    def overall_average(self) -> tuple:
        """Mean over the per-domain averages."""
        per_domain = self.domain_average()
        if not per_domain:
            return float("nan"), float("nan")
        mses, maes = zip(*per_domain.values())
        return float(np.mean(mses)), float(np.mean(maes))

    def merged_with(self, other: "MetricReport") -> "MetricReport":
        return MetricReport(records=self.records + other.records,
                            excluded=sorted(set(self.excluded + other.excluded)))


def pooled_metrics(preds: np.ndarray, targets: np.ndarray) -> tuple:
    errors = np.asarray(preds, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(errors ** 2)), float(np.mean(np.abs(errors)))


def evaluate(encoder, backbone, head, dataset: dat.DomainDataset, split: str,
             model_spec: mdl.ModelSpec, stride: int) -> tuple:
    """Pooled (MSE, MAE) over every window and channel of the split."""
    samples = list(dat.extract_windows(dataset, split))
    preds = mdl.predict_batch(samples, model_spec, stride, encoder, backbone, head)
    targets = np.asarray([s.target for s in samples])
    return pooled_metrics(preds, targets)


def evaluate_artifacts(trained: TrainedArtifacts, split: str = "test",
                       base_dir: Path | None = None) -> MetricReport:
    """Score each training domain with its own head and the best encoder."""
    report = MetricReport()
    g = trained.config.global_cfg
    for i, spec in enumerate(trained.config.domains, start=1):
        if spec.name not in trained.heads:
            raise TransferError(f"no trained head for domain '{spec.name}'")
        ds = build_dataset(spec, g, domain_id=i, base_dir=base_dir)
        mse, mae = evaluate(trained.encoder_for(spec.name),
                            trained.backbone_for(spec.name),
                            trained.heads[spec.name], ds, split,
                            trained.model_spec, spec.stride)
        report.add(MetricRecord(domain=spec.name, horizon=spec.horizon,
                                mse=mse, mae=mae))
    return report


def fewshot_eligible(spec: DomainSpec, fraction: float) -> bool:
    eligible = ceil(fraction * spec.splits[0])
    return eligible >= spec.lookback + spec.horizon


@dataclass
class FewshotResult:
    report: MetricReport
    trained: TrainedArtifacts
    fraction: float


def fewshot_protocol(cfg: ExperimentConfig, fraction: float,
                     base_dir: Path | None = None) -> FewshotResult:
    """Train on the leading `fraction` of every train split, then score tests.

    Domains whose truncated train split cannot hold one window are excluded
    and reported with a marker rather than failing the run.
    """
    if not 0.0 < fraction <= 1.0:
        raise ProtocolError(f"few-shot fraction must be in (0, 1], got {fraction}")
    kept = [d for d in cfg.domains if fewshot_eligible(d, fraction)]
    excluded = [d.name for d in cfg.domains if not fewshot_eligible(d, fraction)]
    if not kept:
        raise ProtocolError(
            f"no domain retains a training window at fraction {fraction}")
    reduced = ExperimentConfig(global_cfg=cfg.global_cfg, domains=kept,
                               zeroshot_targets=cfg.zeroshot_targets)
    trained = run(reduced, base_dir, train_fraction=fraction)
    report = evaluate_artifacts(trained, "test", base_dir)
    report.excluded = excluded
    return FewshotResult(report=report, trained=trained, fraction=fraction)


@dataclass
class ZeroshotResult:
    report: MetricReport
    chosen: dict  # target -> source
    candidate_val_mse: dict  # target -> {source: val mse}


def zeroshot_protocol(trained: TrainedArtifacts, targets: list,
                      base_dir: Path | None = None) -> ZeroshotResult:
    """Reuse trained local parameters on held-out targets.

    A target whose family matches exactly one source reuses that source
    outright; otherwise every shape-compatible source is scored on the
    target's validation split and the argmin-MSE source is kept. Test
    metrics are reported for the chosen source only. Source parameters are
    checksummed before and after to guarantee evaluation never mutates them.
    """
    if not targets:
        raise ProtocolError("zero-shot needs at least one target dataset")
    g = trained.config.global_cfg
    before = {tag: group_checksum(arrays)
              for tag, arrays in artifact_groups(trained).items()}
    report = MetricReport()
    chosen: dict[str, str] = {}
    candidate_scores: dict[str, dict] = {}
    for j, target in enumerate(targets, start=1):
        ds = build_dataset(target, g, domain_id=1000 + j, base_dir=base_dir)
        rows = trained.model_spec.rows_for(target.lookback, target.stride)
        needed = rows * g.dim
        candidates = [d.name for d in trained.config.domains
                      if trained.heads[d.name].in_features == needed
                      and trained.heads[d.name].horizon == target.horizon]
        if not candidates:
            raise TransferError(
                f"no source head matches target '{target.name}' "
                f"({needed} features, horizon {target.horizon})")
        family_matches = [d.name for d in trained.config.domains
                          if d.name in candidates
                          and d.family_name == target.family_name]
        if len(family_matches) == 1:
            source = family_matches[0]
            candidate_scores[target.name] = {}
        else:
            scores = {}
            for name in candidates:
                mse, _ = evaluate(trained.encoder_for(name),
                                  trained.backbone_for(name),
                                  trained.heads[name], ds, "val",
                                  trained.model_spec, target.stride)
                scores[name] = mse
            source = min(candidates, key=lambda n: scores[n])
            candidate_scores[target.name] = scores
        mse, mae = evaluate(trained.encoder_for(source),
                            trained.backbone_for(source),
                            trained.heads[source], ds, "test",
                            trained.model_spec, target.stride)
        report.add(MetricRecord(domain=target.name, horizon=target.horizon,
                                mse=mse, mae=mae, source=source))
        chosen[target.name] = source
    after = {tag: group_checksum(arrays)
             for tag, arrays in artifact_groups(trained).items()}
    if before != after:
        raise ProtocolError("zero-shot evaluation mutated source parameters")
    return ZeroshotResult(report=report, chosen=chosen,
                          candidate_val_mse=candidate_scores)


ABLATION_VARIANTS = ("baseline", "no-prompt", "shared-head", "no-agg")


def ablation_suite(cfg: ExperimentConfig, base_dir: Path | None = None,
                   variants=ABLATION_VARIANTS) -> dict:
    """Train the baseline and requested ablations, score their test splits."""
    out = {}
    for variant in variants:
        variant_cfg = cfg if variant == "baseline" else with_overrides(
            cfg, ablation=variant)
        trained = (isolate_run(variant_cfg, base_dir) if variant == "no-agg"
                   else run(variant_cfg, base_dir))
        out[variant] = {
            "best_avg_val": trained.best_avg_val,
            "best_round": trained.best_round,
            "report": evaluate_artifacts(trained, "test", base_dir),
        }
    return out
