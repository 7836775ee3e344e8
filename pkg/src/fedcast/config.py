"""Experiment configuration: YAML schema, defaults, validation.

One file drives everything. `global` holds the architecture and protocol
settings (all defaulted to the standard benchmark values, so a run needs
little more than dataset entries); `domains` lists one client per entry,
each backed by a CSV path or an inline synthetic spec; `zeroshot_targets`
optionally lists held-out datasets for transfer evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from . import data as dat
from . import synth
from .errors import ConfigError

ABLATIONS = ("none", "no-prompt", "shared-head", "no-agg")
TUNING = ("freeze", "fpt", "full")


@dataclass
class GlobalConfig:
    seed: int = 0
    rounds: int = 100
    local_epochs: int = 1
    lr: float = 1e-4
    dim: int = 64
    heads: int = 8
    patch_len: int = 16
    vocab: int = 1000
    num_prototypes: int = 100
    num_prompts: int = 12
    max_len: int = 64
    depth: int = 6
    tuning_mode: str = "freeze"
    ablation: str = "none"

    @property
    def effective_prompts(self) -> int:
        return 0 if self.ablation == "no-prompt" else self.num_prompts


@dataclass
class DomainSpec:
    name: str
    channels: int
    splits: tuple
    csv: str | None = None
    synth: dict | None = None
    lookback: int = 96
    horizon: int = 96
    stride: int = 16
    batch_size: int = 32
    oversample: int = 1
    family: str | None = None  # zero-shot source grouping; defaults to name

    @property
    def family_name(self) -> str:
        return self.family or self.name


@dataclass
class ExperimentConfig:
    global_cfg: GlobalConfig
    domains: list
    zeroshot_targets: list = field(default_factory=list)

    def domain(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise ConfigError(f"unknown domain '{name}'")


_GLOBAL_KEYS = {
    "seed": int, "rounds": int, "local_epochs": int, "lr": float, "dim": int,
    "heads": int, "patch_len": int, "vocab": int, "num_prototypes": int,
    "num_prompts": int, "max_len": int, "depth": int,
    "tuning_mode": str, "ablation": str,
}

_DOMAIN_KEYS = {
    "name": str, "channels": int, "splits": None, "csv": str, "synth": None,
    "lookback": int, "horizon": int, "stride": int, "batch_size": int,
    "oversample": int, "family": str,
}


def _parse_domain(entry: dict, where: str) -> DomainSpec:
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: each domain must be a mapping")
    for key in ("name", "channels", "splits"):
        if key not in entry:
            raise ConfigError(f"{where}: missing key '{key}'")
    unknown = set(entry) - set(_DOMAIN_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    splits = entry["splits"]
    if not (isinstance(splits, (list, tuple)) and len(splits) == 3):
        raise ConfigError(f"{where}: 'splits' must be [train, val, test]")
    kwargs = {k: v for k, v in entry.items() if k not in ("splits",)}
    kwargs["splits"] = tuple(int(s) for s in splits)
    if entry.get("csv") is None and entry.get("synth") is None:
        raise ConfigError(f"{where}: needs either 'csv' or 'synth'")
    if entry.get("csv") is not None and entry.get("synth") is not None:
        raise ConfigError(f"{where}: 'csv' and 'synth' are mutually exclusive")
    return DomainSpec(**kwargs)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    g = raw.get("global", {})
    if not isinstance(g, dict):
        raise ConfigError("'global' must be a mapping")
    unknown = set(g) - set(_GLOBAL_KEYS)
    if unknown:
        raise ConfigError(f"global: unknown key(s) {sorted(unknown)}")
    gc = GlobalConfig(**{k: _GLOBAL_KEYS[k](v) if _GLOBAL_KEYS[k] else v
                         for k, v in g.items()})
    if "domains" not in raw or not raw["domains"]:
        raise ConfigError("missing key 'domains'")
    domains = [_parse_domain(d, f"domains[{i}]") for i, d in enumerate(raw["domains"])]
    targets = [_parse_domain(d, f"zeroshot_targets[{i}]")
               for i, d in enumerate(raw.get("zeroshot_targets") or [])]
    cfg = ExperimentConfig(global_cfg=gc, domains=domains, zeroshot_targets=targets)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    return from_dict(raw)


def validate(cfg: ExperimentConfig) -> None:
    g = cfg.global_cfg
    if g.dim % g.heads != 0:
        raise ConfigError(f"dim ({g.dim}) must be divisible by heads ({g.heads})")
    if not g.num_prompts <= g.num_prototypes < g.vocab:
        raise ConfigError(
            f"need num_prompts <= num_prototypes < vocab, got "
            f"{g.num_prompts} / {g.num_prototypes} / {g.vocab}")
    if g.tuning_mode not in TUNING:
        raise ConfigError(f"tuning_mode must be one of {TUNING}")
    if g.ablation not in ABLATIONS:
        raise ConfigError(f"ablation must be one of {ABLATIONS}")
    if g.rounds < 0 or g.local_epochs < 1 or g.lr <= 0:
        raise ConfigError("rounds must be >= 0, local_epochs >= 1, lr > 0")
    seen = set()
    for d in cfg.domains + cfg.zeroshot_targets:
        if d.name in seen:
            raise ConfigError(f"duplicate domain name '{d.name}'")
        seen.add(d.name)
        if d.lookback <= 0 or d.horizon <= 0 or d.stride <= 0 or d.batch_size <= 0:
            raise ConfigError(f"{d.name}: lookback/horizon/stride/batch_size must be positive")
        if g.patch_len > d.lookback:
            raise ConfigError(
                f"{d.name}: patch length {g.patch_len} exceeds lookback {d.lookback}")
        rows = g.effective_prompts + dat.num_patches(d.lookback, g.patch_len, d.stride)
        if rows > g.max_len:
            raise ConfigError(
                f"{d.name}: {rows} backbone rows exceed max_len {g.max_len}")
    if g.ablation == "shared-head":
        shapes = {(g.effective_prompts
                   + dat.num_patches(d.lookback, g.patch_len, d.stride), d.horizon)
                  for d in cfg.domains}
        if len(shapes) > 1:
            raise ConfigError(
                "shared-head ablation requires identical (rows, horizon) across "
                f"domains, got {sorted(shapes)}")


def build_dataset(spec: DomainSpec, g: GlobalConfig, domain_id: int,
                  base_dir: Path | None = None) -> dat.DomainDataset:
    """Materialize a domain: read its CSV or synthesize it, then standardize."""
    if g.patch_len > spec.lookback:
        raise ConfigError(
            f"{spec.name}: patch length {g.patch_len} exceeds lookback {spec.lookback}")
    if spec.csv is not None:
        path = Path(spec.csv)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        ds = dat.load_csv(path, name=spec.name, domain_id=domain_id,
                          splits=spec.splits, lookback=spec.lookback,
                          horizon=spec.horizon, stride=spec.stride,
                          batch_size=spec.batch_size,
                          oversample_weight=spec.oversample,
                          channels=spec.channels)
    else:
        ds = generate_from_spec(spec, g, domain_id)
    ds.ensure_trainable()
    return dat.standardize(ds)


def generate_from_spec(spec: DomainSpec, g: GlobalConfig,
                       domain_id: int) -> dat.DomainDataset:
    raw = dict(spec.synth or {})
    unknown = set(raw) - {"shared", "own", "noise_std", "seed", "length"}
    if unknown:
        raise ConfigError(f"{spec.name}: unknown synth key(s) {sorted(unknown)}")
    length = int(raw.get("length", sum(spec.splits)))
    sspec = synth.SynthSpec(
        name=spec.name, channels=spec.channels, length=length, splits=spec.splits,
        shared=[tuple(map(float, c)) for c in raw.get("shared", [])],
        own=[tuple(map(float, c)) for c in raw.get("own", [])],
        noise_std=float(raw.get("noise_std", 0.1)),
        seed=int(raw["seed"]) if "seed" in raw else g.seed + domain_id)
    return synth.generate(sspec, domain_id=domain_id, lookback=spec.lookback,
                          horizon=spec.horizon, stride=spec.stride,
                          batch_size=spec.batch_size,
                          oversample_weight=spec.oversample)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical dict form used for the config snapshot in the output dir."""
    g = cfg.global_cfg
    out = {"global": {k: getattr(g, k) for k in _GLOBAL_KEYS}}

    def dump(d: DomainSpec) -> dict:
        entry = {"name": d.name, "channels": d.channels, "splits": list(d.splits),
                 "lookback": d.lookback, "horizon": d.horizon, "stride": d.stride,
                 "batch_size": d.batch_size, "oversample": d.oversample}
        if d.csv is not None:
            entry["csv"] = d.csv
        if d.synth is not None:
            entry["synth"] = d.synth
        if d.family is not None:
            entry["family"] = d.family
        return entry

    out["domains"] = [dump(d) for d in cfg.domains]
    if cfg.zeroshot_targets:
        out["zeroshot_targets"] = [dump(d) for d in cfg.zeroshot_targets]
    return out


def with_overrides(cfg: ExperimentConfig, *, seed=None, ablation=None,
                   tuning=None, depth=None) -> ExperimentConfig:
    g = cfg.global_cfg
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
    if ablation is not None:
        changes["ablation"] = ablation
    if tuning is not None:
        changes["tuning_mode"] = tuning
    if depth is not None:
        changes["depth"] = int(depth)
    if not changes:
        return cfg
    new = ExperimentConfig(global_cfg=replace(g, **changes),
                           domains=cfg.domains,
                           zeroshot_targets=cfg.zeroshot_targets)
    validate(new)
    return new
