"""Energy-score training losses for the representation learner.

Three pieces:

* ``loss_dpa``: reconstruction energy score.  For each sample x the
  decoder produces m stochastic reconstructions from enc(x) plus fresh
  noise, and the loss is  E||x - xhat|| - 0.5 E||xhat - xhat'||,
  estimated with the standard unbiased m-draw form.  This is a strictly
  proper scoring rule for the conditional law of x given enc(x).
* ``loss_prior``: the same score matching enc(x) against samples from an
  environment-conditioned Gaussian prior g(e, xi) = mu(e) + xi * s(e),
  where an MLP maps the env one-hot to (mu, log s).
* ``loss_rl = loss_dpa + alpha * loss_prior``.

All three return exact hand-written gradients for every network
involved.  Noise draws travel inside the batch, so each loss is a
deterministic function of (networks, batch); that is what makes the
finite-difference checks in the tests meaningful.

The final per-item reductions use math.fsum, so estimates are exactly
invariant to permuting items within a batch (numpy's pairwise summation
would reorder roundoff).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .nn import Mlp, MlpGrads, mlp_backward, mlp_forward


@dataclass
class EnergyBatch:
    """One training batch plus all the noise the losses will consume.

    dec_noise has shape (m, n, dec_noise_dim) and g_noise (m, n, k);
    m >= 2 because the pair term needs at least one pair.
    """

    X: np.ndarray
    env_onehot: np.ndarray
    dec_noise: np.ndarray
    g_noise: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.env_onehot.ndim != 2:
            raise ShapeError("X and env_onehot must be 2-d")
        n = self.X.shape[0]
        if self.env_onehot.shape[0] != n:
            raise ShapeError("env_onehot row count does not match X")
        if self.dec_noise.ndim != 3 or self.g_noise.ndim != 3:
            raise ShapeError("noise stacks must be (m, n, dim)")
        if self.dec_noise.shape[1] != n or self.g_noise.shape[1] != n:
            raise ShapeError("noise stacks do not match the batch size")
        if self.dec_noise.shape[0] < 2 or self.g_noise.shape[0] < 2:
            raise ConfigError("need m >= 2 noise draws per item")
        row_sums = self.env_onehot.sum(axis=1)
        is_binary = np.isin(self.env_onehot, (0.0, 1.0)).all()
        if not is_binary or not np.array_equal(row_sums, np.ones(n)):
            raise DataError("env_onehot rows must be one-hot")

    @property
    def m(self) -> int:
        return self.dec_noise.shape[0]


def make_energy_batch(X, env_idx, n_env: int, m: int, dec_noise_dim: int,
                      latent_dim: int, rng: np.random.Generator) -> EnergyBatch:
    X = np.asarray(X, dtype=np.float64)
    env_idx = np.asarray(env_idx)
    if env_idx.shape != (X.shape[0],):
        raise ShapeError("env_idx must have one entry per row of X")
    if env_idx.min() < 0 or env_idx.max() >= n_env:
        raise DataError(
            f"environment index out of range: saw {int(env_idx.max())} "
            f"with {n_env} environments"
        )
    onehot = np.zeros((X.shape[0], n_env))
    onehot[np.arange(X.shape[0]), env_idx.astype(int)] = 1.0
    dec_noise = rng.standard_normal((m, X.shape[0], dec_noise_dim))
    g_noise = rng.standard_normal((m, X.shape[0], latent_dim))
    return EnergyBatch(X, onehot, dec_noise, g_noise)


@dataclass
class RlGrads:
    enc: MlpGrads | None = None
    dec: MlpGrads | None = None
    g: MlpGrads | None = None


def _row_norms(r: np.ndarray) -> np.ndarray:
    return np.sqrt((r * r).sum(axis=1))


def _unit_rows(r: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """r / ||r|| per row with the zero subgradient at ||r|| = 0."""
    safe = np.where(norms > 0.0, norms, 1.0)
    u = r / safe[:, None]
    u[norms == 0.0] = 0.0
    return u


def _fmean(values: np.ndarray) -> float:
    return math.fsum(values) / len(values)


def _score_terms(target: np.ndarray, draws: list[np.ndarray], want_grads: bool):
    """Energy-score core shared by both losses.

    target: (n, d); draws: m arrays (n, d) of stochastic proposals.
    Returns (value, d_target, [d_draw_j]) where value =
    mean_i [ (1/m) sum_j ||t_i - s_ij||
             - (1/2) (2/(m(m-1))) sum_{j<j'} ||s_ij - s_ij'|| ].
    """
    n = target.shape[0]
    m = len(draws)
    term1 = np.zeros(n)
    d_target = np.zeros_like(target) if want_grads else None
    d_draws = [np.zeros_like(target) for _ in range(m)] if want_grads else None
    c1 = 1.0 / (n * m)
    for j, s in enumerate(draws):
        r = target - s
        norms = _row_norms(r)
        term1 += norms
        if want_grads:
            u = _unit_rows(r, norms)
            d_target += c1 * u
            d_draws[j] -= c1 * u
    term1 /= m

    pair = np.zeros(n)
    c2 = 1.0 / (n * m * (m - 1))
    for j in range(m):
        for jp in range(j + 1, m):
            r = draws[j] - draws[jp]
            norms = _row_norms(r)
            pair += norms
            if want_grads:
                u = _unit_rows(r, norms)
                d_draws[j] -= c2 * u
                d_draws[jp] += c2 * u
    pair *= 2.0 / (m * (m - 1))

    value = _fmean(term1) - 0.5 * _fmean(pair)
    return value, d_target, d_draws


def g_output_dim(k: int, full_scale: bool) -> int:
    """Prior-net output width: mean plus either per-coordinate log-scales
    or the packed lower triangle of a full scale matrix."""
    return k + (k * (k + 1)) // 2 if full_scale else 2 * k


def _check_nets(enc: Mlp | None, dec: Mlp | None, g: Mlp | None, batch: EnergyBatch,
                full_scale: bool = False):
    if enc is not None and enc.config.in_dim != batch.X.shape[1]:
        raise ShapeError("encoder input width does not match X")
    if enc is not None and dec is not None:
        k = enc.config.out_dim
        want = k + batch.dec_noise.shape[2]
        if dec.config.in_dim != want:
            raise ShapeError(
                f"decoder expects {dec.config.in_dim} inputs, "
                f"latent+noise give {want}"
            )
        if dec.config.out_dim != batch.X.shape[1]:
            raise ShapeError("decoder output width does not match X")
    if enc is not None and g is not None:
        k = enc.config.out_dim
        want = g_output_dim(k, full_scale)
        if g.config.out_dim != want:
            raise ShapeError(f"prior net must emit {want} outputs (mean plus scale)")
        if g.config.in_dim != batch.env_onehot.shape[1]:
            raise ShapeError("prior net input width does not match env one-hots")
        if batch.g_noise.shape[2] != k:
            raise ShapeError("g_noise dimension does not match the latent dim")


def _dpa_given_latents(dec: Mlp, batch: EnergyBatch, Z: np.ndarray,
                       want_grads: bool, rng):
    k = Z.shape[1]
    draws, caches = [], []
    for j in range(batch.m):
        inp = np.concatenate([Z, batch.dec_noise[j]], axis=1)
        xhat, cache = mlp_forward(dec, inp, rng=rng)
        draws.append(xhat)
        caches.append(cache)
    value, _, d_draws = _score_terms(batch.X, draws, want_grads)
    if not want_grads:
        return value, None, None
    dec_grads = None
    dZ = np.zeros_like(Z)
    for j in range(batch.m):
        gj, d_inp = mlp_backward(dec, caches[j], d_draws[j])
        dec_grads = gj if dec_grads is None else dec_grads.add_(gj)
        dZ += d_inp[:, :k]
    return value, dZ, dec_grads


def _prior_given_latents(g: Mlp, batch: EnergyBatch, Z: np.ndarray,
                         want_grads: bool, rng, full_scale: bool = False):
    k = Z.shape[1]
    out, cache = mlp_forward(g, batch.env_onehot, rng=rng)
    mu = out[:, :k]
    if full_scale:
        rows, cols = np.tril_indices(k)
        L = np.zeros((out.shape[0], k, k))
        L[:, rows, cols] = out[:, k:]
        draws = [mu + np.einsum("nab,nb->na", L, batch.g_noise[j])
                 for j in range(batch.m)]
    else:
        s = np.exp(out[:, k:])
        draws = [mu + batch.g_noise[j] * s for j in range(batch.m)]
    value, dZ, d_draws = _score_terms(Z, draws, want_grads)
    if not want_grads:
        return value, None, None
    d_mu = np.zeros_like(mu)
    if full_scale:
        dL = np.zeros_like(L)
        for j in range(batch.m):
            d_mu += d_draws[j]
            dL += d_draws[j][:, :, None] * batch.g_noise[j][:, None, :]
        d_scale = dL[:, rows, cols]
    else:
        d_scale = np.zeros_like(s)
        for j in range(batch.m):
            d_mu += d_draws[j]
            d_scale += d_draws[j] * batch.g_noise[j] * s
    g_grads, _ = mlp_backward(g, cache, np.concatenate([d_mu, d_scale], axis=1))
    return value, dZ, g_grads


def loss_dpa(enc: Mlp, dec: Mlp, batch: EnergyBatch, want_grads: bool = True,
             rng: np.random.Generator | None = None):
    """Reconstruction energy score.  Returns (value, RlGrads)."""
    _check_nets(enc, dec, None, batch)
    Z, enc_cache = mlp_forward(enc, batch.X, rng=rng)
    value, dZ, dec_grads = _dpa_given_latents(dec, batch, Z, want_grads, rng)
    if not want_grads:
        return value, RlGrads()
    enc_grads, _ = mlp_backward(enc, enc_cache, dZ)
    return value, RlGrads(enc=enc_grads, dec=dec_grads)


def loss_prior(enc: Mlp, g: Mlp, batch: EnergyBatch, want_grads: bool = True,
               rng: np.random.Generator | None = None, full_scale: bool = False):
    """Latent-prior energy score.  Returns (value, RlGrads)."""
    _check_nets(enc, None, g, batch, full_scale)
    Z, enc_cache = mlp_forward(enc, batch.X, rng=rng)
    value, dZ, g_grads = _prior_given_latents(g, batch, Z, want_grads, rng, full_scale)
    if not want_grads:
        return value, RlGrads()
    enc_grads, _ = mlp_backward(enc, enc_cache, dZ)
    return value, RlGrads(enc=enc_grads, g=g_grads)


def loss_rl(enc: Mlp, dec: Mlp, g: Mlp, batch: EnergyBatch, alpha: float,
            want_grads: bool = True, rng: np.random.Generator | None = None,
            full_scale: bool = False):
    """Combined loss  L_dpa + alpha * L_prior.

    Returns ((rl, dpa, prior), RlGrads); the encoder gradient is the
    weighted sum of both contributions through a single encoder pass.
    """
    if alpha < 0.0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    _check_nets(enc, dec, g, batch, full_scale)
    Z, enc_cache = mlp_forward(enc, batch.X, rng=rng)
    v_dpa, dZ1, dec_grads = _dpa_given_latents(dec, batch, Z, want_grads, rng)
    v_prior, dZ2, g_grads = _prior_given_latents(g, batch, Z, want_grads, rng,
                                                 full_scale)
    value = v_dpa + alpha * v_prior
    if not want_grads:
        return (value, v_dpa, v_prior), RlGrads()
    enc_grads, _ = mlp_backward(enc, enc_cache, dZ1 + alpha * dZ2)
    if g_grads is not None:
        g_grads.scale_(alpha)
    return (value, v_dpa, v_prior), RlGrads(enc=enc_grads, dec=dec_grads, g=g_grads)
