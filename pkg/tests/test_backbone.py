"""Backbone: shape contract, tuning modes, freeze stability, gradient flow."""

import numpy as np
import pytest

from fedcast import autodiff as ad
from fedcast import backbone as bb
from fedcast.errors import ConfigError, ContractError

RNG = np.random.default_rng(9)


def make(depth=2, dim=16, heads=4, vocab=30, max_len=12, mode="freeze", seed=4):
    return bb.init_backbone(dim=dim, heads=heads, depth=depth, vocab=vocab,
                            max_len=max_len, seed=seed, tuning_mode=mode)


def test_forward_preserves_shape():
    params = make()
    tokens = ad.const(RNG.standard_normal((7, 16)))
    assert bb.forward(tokens, params).shape == (7, 16)


def test_depth_zero_is_tokens_plus_positional():
    params = make(depth=0)
    tokens = RNG.standard_normal((5, 16))
    out = bb.forward(ad.const(tokens), params)
    assert np.allclose(out.data, tokens + params.positional.data[:5])


def test_forward_deterministic_in_freeze_mode():
    params = make()
    tokens = RNG.standard_normal((6, 16))
    a = bb.forward(ad.const(tokens), params)
    b = bb.forward(ad.const(tokens), params)
    assert np.array_equal(a.data, b.data)


def test_sequence_too_long_rejected():
    params = make(max_len=4)
    with pytest.raises(ContractError):
        bb.forward(ad.const(np.zeros((5, 16))), params)


def test_width_mismatch_rejected():
    params = make()
    with pytest.raises(ContractError):
        bb.forward(ad.const(np.zeros((3, 8))), params)


def test_same_seed_same_weights():
    a, b = make(seed=7), make(seed=7)
    assert bb.checksum(a) == bb.checksum(b)
    assert bb.checksum(a) != bb.checksum(make(seed=8))


class TestTrainableLeaves:
    def test_freeze_has_none(self):
        assert bb.trainable_leaves(make(mode="freeze")) == []

    def test_fpt_exact_group(self):
        params = make(depth=6, mode="fpt")
        leaves = bb.trainable_leaves(params)
        # 1 positional table + 2 gains + 2 biases per layer
        assert len(leaves) == 1 + 6 * 4
        names = {t.name for t in leaves}
        assert "positional" in names
        assert all(("ln" in n) or n == "positional" for n in names)

    def test_full_is_everything_but_embedding(self):
        params = make(depth=2, mode="full")
        leaves = bb.trainable_leaves(params)
        all_named = dict(params.named_tensors())
        assert len(leaves) == len(all_named) - 1
        assert params.embedding not in leaves

    def test_embedding_never_trainable(self):
        for mode in bb.TUNING_MODES:
            params = make(mode=mode)
            assert not params.embedding.trainable


def test_trainable_flags_match_mode():
    fpt = make(depth=3, mode="fpt")
    expected = {id(t) for t in bb.trainable_leaves(fpt)}
    for name, t in fpt.named_tensors():
        assert t.trainable == (id(t) in expected), name


def test_gradients_flow_through_frozen_backbone():
    params = make(mode="freeze")
    upstream = ad.leaf(RNG.standard_normal((6, 16)) * 0.3, trainable=True)
    out = bb.forward(upstream, params)
    grads = ad.backward(ad.reduce_sum(ad.mul(out, out)))
    assert np.abs(grads[upstream]).max() > 0
    assert all(t not in grads for _, t in params.named_tensors())
    assert bb.checksum(params) == bb.checksum(params)


def test_checksum_covers_every_group():
    params = make()
    base = bb.checksum(params)
    params.blocks[0].ffn_b2.data[0] += 1e-9
    assert bb.checksum(params) != base


def test_copy_independent():
    params = make()
    clone = params.copy()
    clone.blocks[0].wq.data[0, 0] += 1.0
    assert bb.checksum(params) != bb.checksum(clone)


def test_attention_rows_normalized_full_attention():
    # probe: uniform tokens under zeroed qk give uniform mixing over all rows
    params = make(depth=1)
    params.blocks[0].wq.data[:] = 0.0
    params.blocks[0].wk.data[:] = 0.0
    tokens = ad.const(RNG.standard_normal((5, 16)))
    out = bb.forward(tokens, params)
    assert out.shape == (5, 16)


def test_bad_mode_rejected():
    with pytest.raises(ConfigError):
        make(mode="adapter")
