"""Globally shared trainable front end.

Two stages: (1) project each patch to a backbone-width token; (2) score a
bank of learned prototypes (linear combinations of the frozen vocabulary
embedding) against the patch tokens with value-free multi-head attention,
keep the top-scoring prototypes per head, and project the gathered query
rows into prompt tokens that precede the patch tokens in the backbone input.

Scores are normalized over the prototype axis, so every patch token
distributes unit mass across prototypes and the per-prototype score sums
rank prototypes meaningfully. Selection indices are constants during the
backward pass; gradients reach prototype rows only through the gathered
query rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .rng import seeded_rng


@dataclass
class EncoderParams:
    """The federated parameter group: everything averaged across clients."""

    patch_w: Tensor  # (patch_len, dim)
    patch_b: Tensor  # (dim,)
    proto_w: Tensor  # (vocab, num_prototypes)
    wq: list  # per head, (dim, head_dim)
    wk: list  # per head, (dim, head_dim)
    prompt_w: Tensor  # (dim, dim)
    prompt_b: Tensor  # (dim,)

    def named_tensors(self):
        yield "patch_w", self.patch_w
        yield "patch_b", self.patch_b
        yield "proto_w", self.proto_w
        for h, t in enumerate(self.wq):
            yield f"wq.{h}", t
        for h, t in enumerate(self.wk):
            yield f"wk.{h}", t
        yield "prompt_w", self.prompt_w
        yield "prompt_b", self.prompt_b

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            patch_w=_clone(self.patch_w), patch_b=_clone(self.patch_b),
            proto_w=_clone(self.proto_w),
            wq=[_clone(t) for t in self.wq], wk=[_clone(t) for t in self.wk],
            prompt_w=_clone(self.prompt_w), prompt_b=_clone(self.prompt_b))

    def num_values(self) -> int:
        return sum(t.size for t in self.tensors())

    def payload_bytes(self) -> int:
        return sum(t.data.nbytes for t in self.tensors())


def _clone(t: Tensor) -> Tensor:
    return ad.leaf(t.data.copy(), trainable=t.trainable, name=t.name)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(*, patch_len: int, dim: int, heads: int, vocab: int,
                 num_prototypes: int, seed: int) -> EncoderParams:
    if dim % heads != 0:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    if not num_prototypes < vocab:
        raise ConfigError(
            f"num_prototypes ({num_prototypes}) must be smaller than vocab ({vocab})")
    head_dim = dim // heads
    rng = seeded_rng(seed, "encoder-init")
    mk = lambda shape, fan, name: ad.leaf(uniform_init(rng, shape, fan),
                                          trainable=True, name=name)
    return EncoderParams(
        patch_w=mk((patch_len, dim), patch_len, "patch_w"),
        patch_b=ad.leaf(np.zeros(dim), trainable=True, name="patch_b"),
        proto_w=mk((vocab, num_prototypes), vocab, "proto_w"),
        wq=[mk((dim, head_dim), dim, f"wq.{h}") for h in range(heads)],
        wk=[mk((dim, head_dim), dim, f"wk.{h}") for h in range(heads)],
        prompt_w=mk((dim, dim), dim, "prompt_w"),
        prompt_b=ad.leaf(np.zeros(dim), trainable=True, name="prompt_b"),
    )


@dataclass
class HeadScores:
    """Diagnostics for one attention head of one encoded sample."""

    scores: np.ndarray  # (num_prototypes, num_patches), columns sum to 1
    totals: np.ndarray  # (num_prototypes,), row sums of `scores`
    indices: list  # selected prototypes, best first


@dataclass
class PromptSelection:
    heads: list  # list[HeadScores]

    def selected_union(self) -> set:
        out: set[int] = set()
        for h in self.heads:
            out.update(int(i) for i in h.indices)
        return out


@dataclass
class EncodeContext:
    """Per-batch reusable nodes: prototype bank and per-head query matrices."""

    prototypes: Tensor  # (num_prototypes, dim)
    queries: list  # per head, (num_prototypes, head_dim)
    query_stack: Tensor  # (heads, num_prototypes, head_dim)
    wk_cat: Tensor  # (dim, heads * head_dim), key weights side by side
    head_dim: int


def align(patches: np.ndarray, params: EncoderParams) -> Tensor:
    return ad.add(ad.matmul(ad.const(patches), params.patch_w), params.patch_b)


def make_prototypes(embedding: Tensor, params: EncoderParams) -> Tensor:
    vocab, num_proto = params.proto_w.shape
    if num_proto >= vocab:
        raise ConfigError("prototype count must be smaller than the vocabulary")
    return ad.matmul(ad.transpose(params.proto_w), embedding)


def make_context(params: EncoderParams, embedding: Tensor) -> EncodeContext:
    protos = make_prototypes(embedding, params)
    queries = [ad.matmul(protos, wq_h) for wq_h in params.wq]
    num_proto = protos.shape[0]
    head_dim = params.wq[0].shape[1]
    query_stack = ad.concat([ad.reshape(q, (1, num_proto, head_dim))
                             for q in queries], axis=0)
    return EncodeContext(prototypes=protos, queries=queries,
                         query_stack=query_stack,
                         wk_cat=ad.concat(list(params.wk), axis=1),
                         head_dim=head_dim)


def score(queries_h: Tensor, tokens: Tensor, wk_h: Tensor, head_dim: int) -> Tensor:
    keys = ad.matmul(tokens, wk_h)
    logits = ad.scale(ad.matmul(queries_h, ad.transpose(keys)),
                      1.0 / np.sqrt(head_dim))
    return ad.softmax(logits, axis=0)  # each patch column sums to 1


def summarize(scores: Tensor) -> Tensor:
    return ad.reduce_sum(scores, axis=1)


def top_m_indices(totals: np.ndarray, m: int) -> list:
    """Indices of the m largest entries, score-descending, ties to lower index."""
    n = len(totals)
    if m > n:
        raise ConfigError(f"cannot select {m} of {n} prototypes")
    order = np.lexsort((np.arange(n), -totals))
    return [int(i) for i in order[:m]]


def select_top_m(totals: np.ndarray, queries_h: Tensor, m: int):
    indices = top_m_indices(totals, m)
    return ad.gather_rows(queries_h, indices), indices


def build_prompts(z_heads: list, params: EncoderParams) -> Tensor:
    if not z_heads:
        raise ContractError("build_prompts needs at least one head")
    rows = z_heads[0].shape[0]
    width = sum(z.shape[1] for z in z_heads)
    if any(z.shape[0] != rows for z in z_heads):
        raise ContractError("per-head selections disagree on row count")
    if width != params.prompt_w.shape[0]:
        raise ContractError(
            f"concatenated head width {width} != prompt projection input "
            f"{params.prompt_w.shape[0]}")
    z = ad.concat(z_heads, axis=1)
    return ad.add(ad.matmul(z, params.prompt_w), params.prompt_b)


def encode(patches: np.ndarray, params: EncoderParams, ctx: EncodeContext,
           num_prompts: int):
    """Produce (prompt tokens, patch tokens, diagnostics) for one sample.

    All heads are scored in one stacked pass (same math as `score` /
    `summarize` head by head); selection and the query-row gathers stay
    per-head. With num_prompts == 0 the prompt stage is skipped entirely
    and the backbone consumes patch tokens alone.
    """
    tokens = align(patches, params)
    if num_prompts == 0:
        return None, tokens, PromptSelection(heads=[])
    num_patches = tokens.shape[0]
    heads = len(ctx.queries)
    keys = ad.reshape(ad.matmul(tokens, ctx.wk_cat),
                      (num_patches, heads, ctx.head_dim))
    logits = ad.scale(ad.bmm(ctx.query_stack, ad.permute(keys, (1, 2, 0))),
                      1.0 / np.sqrt(ctx.head_dim))
    scores = ad.softmax(logits, axis=1)  # per head, columns sum to 1
    totals = ad.reduce_sum(scores, axis=2)
    z_heads = []
    diag = []
    for h, queries_h in enumerate(ctx.queries):
        z_h, indices = select_top_m(totals.data[h], queries_h, num_prompts)
        z_heads.append(z_h)
        diag.append(HeadScores(scores=scores.data[h].copy(),
                               totals=totals.data[h].copy(), indices=indices))
    prompts = build_prompts(z_heads, params)
    return prompts, tokens, PromptSelection(heads=diag)
