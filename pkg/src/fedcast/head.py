"""Per-domain prediction head: flatten backbone output, project to the horizon.

The one parameter group that never leaves its client (outside the shared-head
ablation). Input width is pinned to the owning domain's (prompts + patches)
row count times the model dim, which is what makes cross-domain reuse a
checkable shape contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import uniform_init
from .errors import TransferError
from .rng import seeded_rng


@dataclass
class HeadParams:
    weight: Tensor  # (rows * dim, horizon)
    bias: Tensor  # (horizon,)
    domain: str

    def named_tensors(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def tensors(self):
        return [self.weight, self.bias]

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def horizon(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(
            weight=ad.leaf(self.weight.data.copy(), trainable=True, name=self.weight.name),
            bias=ad.leaf(self.bias.data.copy(), trainable=True, name=self.bias.name),
            domain=self.domain)


def init_head(*, rows: int, dim: int, horizon: int, domain: str, seed: int) -> HeadParams:
    fan_in = rows * dim
    rng = seeded_rng(seed, "head-init", domain)
    return HeadParams(
        weight=ad.leaf(uniform_init(rng, (fan_in, horizon), fan_in),
                       trainable=True, name=f"head.{domain}.weight"),
        bias=ad.leaf(np.zeros(horizon), trainable=True, name=f"head.{domain}.bias"),
        domain=domain)


def predict(rep: Tensor, params: HeadParams) -> Tensor:
    """Flatten row-major and apply the affine map; output is (1, horizon)."""
    rows, dim = rep.shape
    if rows * dim != params.in_features:
        raise TransferError(
            f"head '{params.domain}' expects {params.in_features} flattened "
            f"features, representation provides {rows * dim}")
    flat = ad.reshape(rep, (1, rows * dim))
    return ad.add(ad.matmul(flat, params.weight), params.bias)
