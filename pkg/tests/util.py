"""Shared test helpers: finite-difference oracle and tiny config builders."""

import numpy as np

from fedcast import autodiff as ad


def finite_difference(f, leaves, step=1e-3):
    """Central-difference gradients of scalar f() w.r.t. each leaf tensor.

    f is re-evaluated with perturbed leaf values; it must read the leaves'
    current .data on every call.
    """
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f())
            flat[i] = orig - step
            lo = float(f())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grad_close(analytic, numeric, rel_tol=1e-4, abs_floor=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    assert analytic.shape == numeric.shape
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    rel = np.abs(analytic - numeric) / denom
    bad = rel > rel_tol
    # entries that are both effectively zero always pass
    both_zero = (np.abs(analytic) < abs_floor) & (np.abs(numeric) < abs_floor)
    bad &= ~both_zero
    assert not bad.any(), (
        f"gradient mismatch: max rel err {rel[~both_zero].max() if (~both_zero).any() else 0}")


def rand_leaf(rng, shape, trainable=True, scale=1.0, name=None):
    return ad.leaf(rng.standard_normal(shape) * scale, trainable=trainable, name=name)
