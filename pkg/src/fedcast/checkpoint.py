"""Deterministic checkpoint container.

A checkpoint is a single JSON document: format version, round index, the
resolved experiment config, and parameter groups keyed by registry tag
('global-encoder', 'backbone' or 'backbone:<domain>', 'head:<domain>',
'local-encoder:<domain>' for aggregation-free runs). Array payloads are
base64-encoded float64 bytes; keys are sorted, so identical training runs
produce byte-identical files.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import config as cfgmod
from . import encoder as enc
from . import head as hd
from . import model as mdl
from .errors import CheckpointError
from .federation import TrainedArtifacts

FORMAT_VERSION = 1


def _arrays_of(named_tensors) -> dict:
    return {name: t.data for name, t in named_tensors}


def _encode_group(arrays: dict) -> dict:
    out = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        out[name] = {"shape": list(arr.shape),
                     "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    return out


def _decode_group(group: dict) -> dict:
    out = {}
    for name, entry in group.items():
        raw = base64.b64decode(entry["data"])
        out[name] = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
    return out


def group_checksum(arrays: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())
    return digest.hexdigest()


def artifact_groups(art: TrainedArtifacts) -> dict:
    groups = {"global-encoder": _arrays_of(art.global_encoder.named_tensors())}
    for name, encoder in sorted(art.local_encoders.items()):
        groups[f"local-encoder:{name}"] = _arrays_of(encoder.named_tensors())
    for name, head in sorted(art.heads.items()):
        groups[f"head:{name}"] = _arrays_of(head.named_tensors())
    for name, backbone in sorted(art.backbones.items()):
        tag = "backbone" if name == "shared" else f"backbone:{name}"
        groups[tag] = _arrays_of(backbone.named_tensors())
    return groups


def save_checkpoint(path, art: TrainedArtifacts) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "seed": art.config.global_cfg.seed,
        "round": art.best_round,
        "best_avg_val": art.best_avg_val,
        "config": cfgmod.to_dict(art.config),
        "groups": {tag: _encode_group(arrays)
                   for tag, arrays in artifact_groups(art).items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def _rebuild_encoder(arrays: dict) -> enc.EncoderParams:
    heads = sum(1 for name in arrays if name.startswith("wq."))
    mk = lambda name: ad.leaf(arrays[name], trainable=True, name=name)
    return enc.EncoderParams(
        patch_w=mk("patch_w"), patch_b=mk("patch_b"), proto_w=mk("proto_w"),
        wq=[mk(f"wq.{h}") for h in range(heads)],
        wk=[mk(f"wk.{h}") for h in range(heads)],
        prompt_w=mk("prompt_w"), prompt_b=mk("prompt_b"))


def _rebuild_head(arrays: dict, domain: str) -> hd.HeadParams:
    return hd.HeadParams(
        weight=ad.leaf(arrays["weight"], trainable=True, name=f"head.{domain}.weight"),
        bias=ad.leaf(arrays["bias"], trainable=True, name=f"head.{domain}.bias"),
        domain=domain)


def _rebuild_backbone(arrays: dict, heads: int, tuning_mode: str) -> bb.BackboneParams:
    depth = 1 + max((int(name.split(".")[1]) for name in arrays
                     if name.startswith("block.")), default=-1)
    train_all = tuning_mode == "full"
    train_norm = tuning_mode in ("fpt", "full")

    def leaf_for(name, trainable):
        return ad.leaf(arrays[name], trainable=trainable, name=name.replace("block.", "b"))

    blocks = []
    for i in range(depth):
        p = f"block.{i}."
        blocks.append(bb.BlockParams(
            wq=leaf_for(f"{p}wq", train_all), wk=leaf_for(f"{p}wk", train_all),
            wv=leaf_for(f"{p}wv", train_all), wo=leaf_for(f"{p}wo", train_all),
            bo=leaf_for(f"{p}bo", train_all),
            ffn_w1=leaf_for(f"{p}ffn_w1", train_all),
            ffn_b1=leaf_for(f"{p}ffn_b1", train_all),
            ffn_w2=leaf_for(f"{p}ffn_w2", train_all),
            ffn_b2=leaf_for(f"{p}ffn_b2", train_all),
            ln1_g=leaf_for(f"{p}ln1_g", train_norm),
            ln1_b=leaf_for(f"{p}ln1_b", train_norm),
            ln2_g=leaf_for(f"{p}ln2_g", train_norm),
            ln2_b=leaf_for(f"{p}ln2_b", train_norm)))
    return bb.BackboneParams(
        embedding=ad.leaf(arrays["embedding"], trainable=False, name="embedding"),
        positional=ad.leaf(arrays["positional"], trainable=train_norm, name="positional"),
        blocks=blocks, heads=heads, tuning_mode=tuning_mode)


def load_checkpoint(path) -> TrainedArtifacts:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    cfg = cfgmod.from_dict(doc["config"])
    g = cfg.global_cfg
    groups = {tag: _decode_group(group) for tag, group in doc["groups"].items()}

    global_encoder = _rebuild_encoder(groups["global-encoder"])
    local_encoders = {}
    heads = {}
    backbones = {}
    for tag, arrays in groups.items():
        if tag.startswith("local-encoder:"):
            local_encoders[tag.split(":", 1)[1]] = _rebuild_encoder(arrays)
        elif tag.startswith("head:"):
            domain = tag.split(":", 1)[1]
            heads[domain] = _rebuild_head(arrays, domain)
        elif tag == "backbone":
            backbones["shared"] = _rebuild_backbone(arrays, g.heads, g.tuning_mode)
        elif tag.startswith("backbone:"):
            backbones[tag.split(":", 1)[1]] = _rebuild_backbone(
                arrays, g.heads, g.tuning_mode)
    model_spec = mdl.ModelSpec(dim=g.dim, heads=g.heads, patch_len=g.patch_len,
                               num_prompts=g.effective_prompts)
    return TrainedArtifacts(config=cfg, model_spec=model_spec, clients=[],
                            global_encoder=global_encoder,
                            local_encoders=local_encoders, heads=heads,
                            backbones=backbones, records=[],
                            best_round=int(doc.get("round", -1)),
                            best_avg_val=float(doc.get("best_avg_val", float("nan"))),
                            quotas={})
