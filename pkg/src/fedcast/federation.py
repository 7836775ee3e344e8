"""Round orchestration: distribute, train locally, average, select by validation.

Every round the server hands each client a fresh copy of the shared encoder;
clients run their local epoch(s) over a quota of batches drawn from a
persistent rotating cursor, upload the updated encoder, and keep their head
(and, in the tunable backbone modes, their backbone copy) private. The
server averages uploads element-wise and scores the fresh global encoder
against every client's full validation split; the round with the lowest
average validation loss provides the reported parameters.

Optimizer state: encoder moments are discarded at the start of every round
(in the standard protocol the tracked parameters were just replaced by the
average; the no-aggregation ablation keeps the same schedule so that a
single isolated client and a single federated client run identical steps),
while head and backbone moments persist with their locally-owned
parameters. The shared-head ablation replaces heads each round and resets
their moments on the same grounds as the encoder.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import ceil, floor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import data as dat
from . import encoder as enc
from . import head as hd
from . import model as mdl
from .config import DomainSpec, ExperimentConfig, build_dataset, with_overrides
from .errors import ConfigError, NonFiniteError, ProtocolError
from .optim import Adam, AdamState
from .rng import seeded_rng


@dataclass
class ClientState:
    spec: DomainSpec
    dataset: dat.DomainDataset
    train_windows: dat.WindowSet
    val_samples: list
    batches: list  # list[list[int]] sample indices
    encoder: enc.EncoderParams
    head: hd.HeadParams
    backbone: bb.BackboneParams
    cursor: int = 0
    head_opt: AdamState = field(default_factory=AdamState)
    backbone_opt: AdamState = field(default_factory=AdamState)
    encoder_opt: AdamState = field(default_factory=AdamState)

    @property
    def domain_id(self) -> int:
        return self.dataset.domain_id

    @property
    def name(self) -> str:
        return self.spec.name


@dataclass
class RoundPlan:
    round_index: int
    quotas: dict  # name -> batches this round


@dataclass
class RoundRecord:
    round_index: int
    train_loss: dict
    val_loss: dict
    avg_val_loss: float
    comm_bytes: dict
    wall_time: float


@dataclass
class TrainedArtifacts:
    config: ExperimentConfig
    model_spec: mdl.ModelSpec
    clients: list
    global_encoder: enc.EncoderParams  # at the best round
    local_encoders: dict  # name -> encoder at the best round (no-agg mode)
    heads: dict  # name -> HeadParams at the best round
    backbones: dict  # name -> BackboneParams ('shared' key in freeze mode)
    records: list
    best_round: int
    best_avg_val: float
    quotas: dict

    def backbone_for(self, name: str) -> bb.BackboneParams:
        return self.backbones.get(name) or self.backbones["shared"]

    def encoder_for(self, name: str) -> enc.EncoderParams:
        return self.local_encoders.get(name) or self.global_encoder


def make_batches(n_samples: int, batch_size: int, rng: np.random.Generator) -> list:
    """Seeded shuffle once, then fixed consecutive chunks (last may be short)."""
    order = rng.permutation(n_samples)
    count = ceil(n_samples / batch_size)
    return [order[i * batch_size:(i + 1) * batch_size].tolist() for i in range(count)]


def compute_quotas(clients) -> dict:
    """Per-round batch quota proportional to the configured sampling weights."""
    total = sum(len(c.batches) for c in clients)
    if total <= 0:
        raise ConfigError("no client provides a training batch")
    weight_sum = sum(c.dataset.oversample_weight for c in clients)
    return {c.name: max(1, floor(total * c.dataset.oversample_weight / weight_sum))
            for c in clients}


def build_clients(cfg: ExperimentConfig, base_dir: Path | None = None,
                  train_fraction: float = 1.0) -> tuple:
    g = cfg.global_cfg
    model_spec = mdl.ModelSpec(dim=g.dim, heads=g.heads, patch_len=g.patch_len,
                               num_prompts=g.effective_prompts)
    shared_backbone = bb.init_backbone(dim=g.dim, heads=g.heads, depth=g.depth,
                                       vocab=g.vocab, max_len=g.max_len,
                                       seed=g.seed, tuning_mode=g.tuning_mode)
    shared_head = None
    clients = []
    for i, spec in enumerate(cfg.domains, start=1):
        ds = build_dataset(spec, g, domain_id=i, base_dir=base_dir)
        train_windows = dat.extract_windows(ds, "train", train_fraction)
        val_samples = list(dat.extract_windows(ds, "val"))
        batches = make_batches(len(train_windows), ds.batch_size,
                               seeded_rng(g.seed, "batch-order", spec.name))
        rows = model_spec.rows_for(spec.lookback, spec.stride)
        if g.ablation == "shared-head":
            if shared_head is None:
                shared_head = hd.init_head(rows=rows, dim=g.dim, horizon=spec.horizon,
                                           domain="shared", seed=g.seed)
            head = shared_head.copy()
        else:
            head = hd.init_head(rows=rows, dim=g.dim, horizon=spec.horizon,
                                domain=spec.name, seed=g.seed)
        backbone = shared_backbone if g.tuning_mode == "freeze" else shared_backbone.copy()
        clients.append(ClientState(spec=spec, dataset=ds,
                                   train_windows=train_windows,
                                   val_samples=val_samples, batches=batches,
                                   encoder=None, head=head, backbone=backbone))
    global_encoder = enc.init_encoder(patch_len=g.patch_len, dim=g.dim,
                                      heads=g.heads, vocab=g.vocab,
                                      num_prototypes=g.num_prototypes, seed=g.seed)
    for c in clients:
        c.encoder = global_encoder.copy()
    return clients, global_encoder, shared_backbone, model_spec


def _named_encoder(params: enc.EncoderParams):
    return [(f"enc.{name}", t) for name, t in params.named_tensors()]


def _named_head(head: hd.HeadParams):
    return [(f"head.{name}", t) for name, t in head.named_tensors()]


def _named_backbone_trainables(backbone: bb.BackboneParams):
    return [(f"bb.{t.name}", t) for t in bb.trainable_leaves(backbone)]


def local_execute(client: ClientState, global_encoder, quota: int,
                  model_spec: mdl.ModelSpec, optimizer: Adam,
                  local_epochs: int, round_index: int):
    """One client's round: load globals, train `quota` batches per epoch."""
    if quota < 1:
        raise ProtocolError(f"{client.name}: round quota must be >= 1")
    if global_encoder is not None:
        client.encoder = global_encoder.copy()
    client.encoder_opt = AdamState()  # encoder moments never survive a round
    enc_named = _named_encoder(client.encoder)
    head_named = _named_head(client.head)
    backbone_named = _named_backbone_trainables(client.backbone)
    losses = []
    for _ in range(local_epochs):
        for _ in range(quota):
            batch = client.batches[client.cursor % len(client.batches)]
            client.cursor += 1
            samples = [client.train_windows[i] for i in batch]
            try:
                loss = mdl.batch_loss(samples, model_spec, client.spec.stride,
                                      client.encoder, client.backbone, client.head)
                grads = ad.backward(loss)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"round {round_index}, client '{client.name}': {exc}") from exc
            optimizer.step(enc_named, grads, client.encoder_opt)
            optimizer.step(head_named, grads, client.head_opt)
            if backbone_named:
                optimizer.step(backbone_named, grads, client.backbone_opt)
            losses.append(float(loss.data))
    return client.encoder, float(np.mean(losses))


def aggregate(encoders: list) -> enc.EncoderParams:
    """Element-wise unweighted mean, summed in the given (client-id) order."""
    if not encoders:
        raise ProtocolError("nothing to aggregate")
    first = list(encoders[0].named_tensors())
    sums = {name: t.data.copy() for name, t in first}
    shapes = {name: t.data.shape for name, t in first}
    for other in encoders[1:]:
        named = dict(other.named_tensors())
        if set(named) != set(sums):
            raise ProtocolError("encoder structures disagree")
        for name, t in named.items():
            if t.data.shape != shapes[name]:
                raise ProtocolError(f"shape mismatch for '{name}'")
            sums[name] += t.data
    n = float(len(encoders))
    averaged = {name: arr / n for name, arr in sums.items()}
    out = encoders[0].copy()
    for name, t in out.named_tensors():
        t.data = averaged[name]
    return out


def _average_heads(heads: list) -> hd.HeadParams:
    shapes = {(h.in_features, h.horizon) for h in heads}
    if len(shapes) > 1:
        raise ProtocolError(f"cannot average heads of differing shapes {sorted(shapes)}")
    out = heads[0].copy()
    out.weight.data = sum(h.weight.data for h in heads) / len(heads)
    out.bias.data = sum(h.bias.data for h in heads) / len(heads)
    out.domain = "shared"
    return out


def run(cfg: ExperimentConfig, base_dir: Path | None = None,
        train_fraction: float = 1.0) -> TrainedArtifacts:
    """Full protocol: T rounds of distribute / local train / average / validate."""
    g = cfg.global_cfg
    no_agg = g.ablation == "no-agg"
    shared_head = g.ablation == "shared-head"
    clients, global_encoder, shared_backbone, model_spec = build_clients(
        cfg, base_dir, train_fraction)
    quotas = compute_quotas(clients)
    optimizer = Adam(lr=g.lr)
    global_head = clients[0].head.copy() if shared_head else None

    records: list[RoundRecord] = []
    best_round = -1
    best_avg = float("inf")

    def take_snapshot():
        local_encoders = ({c.name: c.encoder.copy() for c in clients}
                          if no_agg else {})
        heads = {c.name: (global_head if shared_head else c.head).copy()
                 for c in clients}
        backbones = ({"shared": shared_backbone} if g.tuning_mode == "freeze"
                     else {c.name: c.backbone.copy() for c in clients})
        return global_encoder.copy(), local_encoders, heads, backbones

    best_snapshot = take_snapshot()  # T=0 returns the initial states

    for t in range(g.rounds):
        started = time.perf_counter()
        uploads = []
        train_losses = {}
        comm = {}
        for client in clients:
            if shared_head:
                client.head = global_head.copy()
                client.head_opt = AdamState()
            upload, train_loss = local_execute(
                client, None if no_agg else global_encoder, quotas[client.name],
                model_spec, optimizer, g.local_epochs, t)
            uploads.append(upload)
            train_losses[client.name] = train_loss
            comm[client.name] = 0 if no_agg else upload.payload_bytes()
        if not no_agg:
            global_encoder = aggregate(uploads)
            if shared_head:
                global_head = _average_heads([c.head for c in clients])
                for c in clients:
                    comm[c.name] += sum(t_.data.nbytes for t_ in c.head.tensors())
        val_losses = {}
        for client in clients:
            eval_encoder = client.encoder if no_agg else global_encoder
            eval_head = global_head if shared_head else client.head
            val_losses[client.name] = mdl.squared_error_mean(
                client.val_samples, model_spec, client.spec.stride,
                eval_encoder, client.backbone, eval_head)
        avg_val = float(np.mean(list(val_losses.values())))
        records.append(RoundRecord(round_index=t, train_loss=train_losses,
                                   val_loss=val_losses, avg_val_loss=avg_val,
                                   comm_bytes=comm,
                                   wall_time=time.perf_counter() - started))
        if avg_val < best_avg:
            best_avg = avg_val
            best_round = t
            best_snapshot = take_snapshot()

    encoder_best, local_best, heads_best, backbones_best = best_snapshot
    return TrainedArtifacts(config=cfg, model_spec=model_spec, clients=clients,
                            global_encoder=encoder_best,
                            local_encoders=local_best, heads=heads_best,
                            backbones=backbones_best, records=records,
                            best_round=best_round,
                            best_avg_val=(best_avg if records else float("nan")),
                            quotas=quotas)


def isolate_run(cfg: ExperimentConfig, base_dir: Path | None = None,
                train_fraction: float = 1.0) -> TrainedArtifacts:
    """Aggregation-free variant: clients train in isolation on their own data."""
    return run(with_overrides(cfg, ablation="no-agg"), base_dir, train_fraction)
