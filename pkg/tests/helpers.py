"""Shared test oracles.

The finite-difference gradient oracle only ever calls the forward loss,
so it stays independent of the hand-written backward passes it checks.
"""
from __future__ import annotations

import numpy as np


def central_diff(loss_fn, array: np.ndarray, flat_index: int, h: float = 1e-5) -> float:
    """Two-sided finite difference of ``loss_fn()`` w.r.t. one entry of
    ``array``, which is perturbed in place and restored."""
    flat = array.reshape(-1)
    old = flat[flat_index]
    flat[flat_index] = old + h
    up = loss_fn()
    flat[flat_index] = old - h
    down = loss_fn()
    flat[flat_index] = old
    return (up - down) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    # The floor absorbs central-difference cancellation noise (~1e-10)
    # on parameters whose true gradient is exactly zero, e.g. a bias
    # feeding batch norm.
    return abs(a - b) / max(abs(a), abs(b), floor)


def max_grad_rel_err(loss_fn, arrays, grads, rng: np.random.Generator,
                     picks_per_array: int = 6, h: float = 1e-5) -> float:
    """Compare analytic gradients against central differences on a random
    subset of entries of every array.  Returns the worst relative error."""
    worst = 0.0
    for arr, g in zip(arrays, grads):
        n = arr.size
        k = min(picks_per_array, n)
        idx = rng.choice(n, size=k, replace=False)
        for i in idx:
            fd = central_diff(loss_fn, arr, int(i), h=h)
            worst = max(worst, rel_err(float(g.reshape(-1)[int(i)]), fd))
    return worst


def pairwise_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows of A and rows of B."""
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    sq = aa + bb - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def energy_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Two-sample energy distance 2 E d(a,b) - E d(a,a') - E d(b,b')."""
    dab = pairwise_dists(A, B).mean()
    daa = pairwise_dists(A, A).mean()
    dbb = pairwise_dists(B, B).mean()
    return 2.0 * dab - daa - dbb
