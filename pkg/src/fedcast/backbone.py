"""Frozen transformer stand-in consuming prompt + patch token sequences.

Seeded random weights replace a pretrained checkpoint at desk scale while
keeping the contract surface intact: pre-norm blocks with full (unmasked)
self-attention, learned positional embeddings, a frozen vocabulary embedding
table, and the three tuning modes that define which parameter groups may
train (none / positional+norms / everything-but-the-embedding).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import uniform_init
from .errors import ConfigError, ContractError
from .rng import seeded_rng

TUNING_MODES = ("freeze", "fpt", "full")


@dataclass
class BlockParams:
    wq: Tensor  # (dim, dim), columns grouped head-major
    wk: Tensor
    wv: Tensor
    wo: Tensor  # (dim, dim)
    bo: Tensor  # (dim,)
    ffn_w1: Tensor  # (dim, 4*dim)
    ffn_b1: Tensor
    ffn_w2: Tensor  # (4*dim, dim)
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def named_tensors(self):
        yield "wq", self.wq
        yield "wk", self.wk
        yield "wv", self.wv
        yield "wo", self.wo
        yield "bo", self.bo
        yield "ffn_w1", self.ffn_w1
        yield "ffn_b1", self.ffn_b1
        yield "ffn_w2", self.ffn_w2
        yield "ffn_b2", self.ffn_b2
        yield "ln1_g", self.ln1_g
        yield "ln1_b", self.ln1_b
        yield "ln2_g", self.ln2_g
        yield "ln2_b", self.ln2_b

    def norm_tensors(self):
        return [self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]


@dataclass
class BackboneParams:
    embedding: Tensor  # (vocab, dim), never trainable in any mode
    positional: Tensor  # (max_len, dim)
    blocks: list  # list[BlockParams]
    heads: int
    tuning_mode: str

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def max_len(self) -> int:
        return self.positional.shape[0]

    def named_tensors(self, include_embedding: bool = True):
        if include_embedding:
            yield "embedding", self.embedding
        yield "positional", self.positional
        for i, block in enumerate(self.blocks):
            for name, t in block.named_tensors():
                yield f"block.{i}.{name}", t

    def copy(self) -> "BackboneParams":
        clone = lambda t: ad.leaf(t.data.copy(), trainable=t.trainable, name=t.name)
        blocks = [BlockParams(**{f: clone(getattr(b, f)) for f in
                                 ("wq", "wk", "wv", "wo", "bo", "ffn_w1", "ffn_b1",
                                  "ffn_w2", "ffn_b2", "ln1_g", "ln1_b",
                                  "ln2_g", "ln2_b")})
                  for b in self.blocks]
        return BackboneParams(embedding=clone(self.embedding),
                              positional=clone(self.positional), blocks=blocks,
                              heads=self.heads, tuning_mode=self.tuning_mode)


def init_backbone(*, dim: int, heads: int, depth: int, vocab: int, max_len: int,
                  seed: int, tuning_mode: str = "freeze") -> BackboneParams:
    if tuning_mode not in TUNING_MODES:
        raise ConfigError(f"tuning mode must be one of {TUNING_MODES}, got {tuning_mode!r}")
    if dim % heads != 0:
        raise ConfigError(f"backbone dim {dim} not divisible by {heads} heads")
    rng = seeded_rng(seed, "backbone-init")
    train_all = tuning_mode == "full"
    train_norm = tuning_mode in ("fpt", "full")

    def w(shape, fan, name, trainable):
        return ad.leaf(uniform_init(rng, shape, fan), trainable=trainable, name=name)

    embedding = ad.leaf(uniform_init(rng, (vocab, dim), dim),
                        trainable=False, name="embedding")
    positional = w((max_len, dim), dim, "positional", train_norm)
    blocks = []
    for i in range(depth):
        blocks.append(BlockParams(
            wq=w((dim, dim), dim, f"b{i}.wq", train_all),
            wk=w((dim, dim), dim, f"b{i}.wk", train_all),
            wv=w((dim, dim), dim, f"b{i}.wv", train_all),
            wo=w((dim, dim), dim, f"b{i}.wo", train_all),
            bo=ad.leaf(np.zeros(dim), trainable=train_all, name=f"b{i}.bo"),
            ffn_w1=w((dim, 4 * dim), dim, f"b{i}.ffn_w1", train_all),
            ffn_b1=ad.leaf(np.zeros(4 * dim), trainable=train_all, name=f"b{i}.ffn_b1"),
            ffn_w2=w((4 * dim, dim), 4 * dim, f"b{i}.ffn_w2", train_all),
            ffn_b2=ad.leaf(np.zeros(dim), trainable=train_all, name=f"b{i}.ffn_b2"),
            ln1_g=ad.leaf(np.ones(dim), trainable=train_norm, name=f"b{i}.ln1_g"),
            ln1_b=ad.leaf(np.zeros(dim), trainable=train_norm, name=f"b{i}.ln1_b"),
            ln2_g=ad.leaf(np.ones(dim), trainable=train_norm, name=f"b{i}.ln2_g"),
            ln2_b=ad.leaf(np.zeros(dim), trainable=train_norm, name=f"b{i}.ln2_b")))
    return BackboneParams(embedding=embedding, positional=positional,
                          blocks=blocks, heads=heads, tuning_mode=tuning_mode)


def trainable_leaves(params: BackboneParams) -> list:
    """Parameter group selected by the tuning mode; the embedding never trains."""
    mode = params.tuning_mode
    if mode == "freeze":
        return []
    if mode == "fpt":
        out = [params.positional]
        for b in params.blocks:
            out.extend(b.norm_tensors())
        return out
    if mode == "full":
        return [t for name, t in params.named_tensors() if name != "embedding"]
    raise ConfigError(f"unknown tuning mode {mode!r}")


def _split_heads(t: Tensor, n: int, heads: int, head_dim: int) -> Tensor:
    return ad.permute(ad.reshape(t, (n, heads, head_dim)), (1, 0, 2))


def forward(tokens: Tensor, params: BackboneParams) -> Tensor:
    """Positional embedding + `depth` pre-norm attention/FFN blocks."""
    n, dim = tokens.shape
    if dim != params.dim:
        raise ContractError(f"token width {dim} != backbone dim {params.dim}")
    if n > params.max_len:
        raise ContractError(f"sequence of {n} rows exceeds max length {params.max_len}")
    heads = params.heads
    head_dim = dim // heads
    inv_sqrt = 1.0 / np.sqrt(head_dim)

    x = ad.add(tokens, ad.gather_rows(params.positional, np.arange(n)))
    for b in params.blocks:
        h = ad.layer_norm(x, b.ln1_g, b.ln1_b)
        q = _split_heads(ad.matmul(h, b.wq), n, heads, head_dim)
        k = _split_heads(ad.matmul(h, b.wk), n, heads, head_dim)
        v = _split_heads(ad.matmul(h, b.wv), n, heads, head_dim)
        logits = ad.scale(ad.bmm(q, ad.permute(k, (0, 2, 1))), inv_sqrt)
        attn = ad.softmax(logits, axis=2)  # full attention, rows sum to 1
        mixed = ad.reshape(ad.permute(ad.bmm(attn, v), (1, 0, 2)), (n, dim))
        x = ad.add(x, ad.add(ad.matmul(mixed, b.wo), b.bo))
        h2 = ad.layer_norm(x, b.ln2_g, b.ln2_b)
        f = ad.gelu(ad.add(ad.matmul(h2, b.ffn_w1), b.ffn_b1))
        x = ad.add(x, ad.add(ad.matmul(f, b.ffn_w2), b.ffn_b2))
    return x


def checksum(params: BackboneParams) -> str:
    """Stable digest of every backbone value, embedding included."""
    digest = hashlib.sha256()
    for name, t in params.named_tensors():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(t.data).tobytes())
    return digest.hexdigest()
