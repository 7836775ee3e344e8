"""End-to-end forward pass: window -> patches -> tokens -> backbone -> forecast.

The per-sample pipeline instance-normalizes the input window, runs the
encoder and backbone, projects with the domain head and maps the forecast
back through the window statistics, so the training loss compares
predictions and targets on the globally standardized scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import data as dat
from . import encoder as enc
from . import head as hd
from .autodiff import Tensor


@dataclass
class ModelSpec:
    """Architecture hyperparameters shared by every client."""

    dim: int
    heads: int
    patch_len: int
    num_prompts: int

    def rows_for(self, lookback: int, stride: int) -> int:
        return self.num_prompts + dat.num_patches(lookback, self.patch_len, stride)


def sample_forward(sample: dat.WindowSample, spec: ModelSpec, stride: int,
                   params: enc.EncoderParams, ctx: enc.EncodeContext,
                   backbone: bb.BackboneParams, head: hd.HeadParams):
    """Denormalized forecast tensor (1, horizon) plus prompt diagnostics."""
    norm = dat.instance_normalize(sample)
    patches = dat.make_patches(norm.values, spec.patch_len, stride)
    prompts, tokens, selection = enc.encode(patches.patches, params, ctx,
                                            spec.num_prompts)
    seq = tokens if prompts is None else ad.concat([prompts, tokens], axis=0)
    rep = bb.forward(seq, backbone)
    pred = hd.predict(rep, head)
    pred = ad.shift(ad.scale(pred, norm.std + dat.INSTANCE_EPS), norm.mean)
    return pred, selection


def sample_loss(sample: dat.WindowSample, spec: ModelSpec, stride: int,
                params: enc.EncoderParams, ctx: enc.EncodeContext,
                backbone: bb.BackboneParams, head: hd.HeadParams) -> Tensor:
    pred, _ = sample_forward(sample, spec, stride, params, ctx, backbone, head)
    target = ad.const(sample.target.reshape(1, -1))
    diff = ad.sub(pred, target)
    return ad.reduce_mean(ad.mul(diff, diff))


def batch_loss(samples, spec: ModelSpec, stride: int, params: enc.EncoderParams,
               backbone: bb.BackboneParams, head: hd.HeadParams) -> Tensor:
    """Mean squared error over a batch; prototype bank built once per batch."""
    ctx = enc.make_context(params, backbone.embedding)
    total = None
    for sample in samples:
        loss = sample_loss(sample, spec, stride, params, ctx, backbone, head)
        total = loss if total is None else ad.add(total, loss)
    return ad.scale(total, 1.0 / len(samples))


def predict_batch(samples, spec: ModelSpec, stride: int,
                  params: enc.EncoderParams, backbone: bb.BackboneParams,
                  head: hd.HeadParams) -> np.ndarray:
    """Forecasts for a list of samples without building a graph."""
    with ad.no_grad():
        ctx = enc.make_context(params, backbone.embedding)
        preds = [sample_forward(s, spec, stride, params, ctx, backbone, head)[0]
                 .data.ravel() for s in samples]
    return np.asarray(preds)


def squared_error_mean(samples, spec: ModelSpec, stride: int,
                       params: enc.EncoderParams, backbone: bb.BackboneParams,
                       head: hd.HeadParams) -> float:
    """Pooled MSE over all samples and horizon steps (standardized scale)."""
    preds = predict_batch(samples, spec, stride, params, backbone, head)
    targets = np.asarray([s.target for s in samples])
    return float(np.mean((preds - targets) ** 2))
