"""ERM and IRM reference regressors.

Both train the same architecture (width/depth/batch-norm mirroring the
representation networks) with Adam on pooled minibatches; they differ
only in the penalty weight.  ERM minimizes pooled MSE and ignores
environment labels.  IRM adds the scalar-multiplier invariance penalty

    lambda * sum_e ( (2/n_e) sum_{i in e} f_i (f_i - y_i) )^2,

the squared gradient of each environment's risk with respect to a
multiplier on the predictor frozen at 1.  With lambda = 0 the penalty
path contributes exact zeros, so IRM training reproduces ERM bitwise on
the same seed — one loop, one batch schedule, one noise stream.

Predictions are raw-scale Y directly; no centering is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError, TrainingDivergedError
from .nn import Mlp, MlpConfig, adam_init, adam_step, mlp_backward, mlp_forward, mlp_init
from .scm import MultiEnvDataset

KINDS = ("erm", "irm")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    width: int = 400
    depth: int = 2
    dropout_p: float = 0.25     # pooled-fit regularization; 0.5 for real data
    irm_lambda: float = 100.0
    lr: float = 1e-4
    epochs: int = 1000
    batch_size: int = 256
    batch_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.irm_lambda < 0.0:
            raise ConfigError(f"irm_lambda must be >= 0, got {self.irm_lambda}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.epochs < 1 or self.width < 1 or self.depth < 1:
            raise ConfigError("epochs, width, and depth must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch statistics")


def predict_baseline(net: Mlp, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.in_dim:
        raise ShapeError(f"expected (n, {net.config.in_dim}) inputs, got {X.shape}")
    net.mode = "eval"
    out, _ = mlp_forward(net, X)
    return out[:, 0]


def irm_penalty_terms(net: Mlp, data: MultiEnvDataset) -> dict:
    """Per-environment squared risk-gradient terms (eval-mode forward)."""
    terms = {}
    for l in data.labels:
        env = data.env(l)
        f = predict_baseline(net, env.X)
        g = 2.0 * float((f * (f - env.Y)).mean())
        terms[l] = g * g
    return terms


def _pool(data: MultiEnvDataset):
    X = np.vstack([data.env(l).X for l in data.labels])
    Y = np.concatenate([data.env(l).Y for l in data.labels])
    idx = np.concatenate([
        np.full(data.env(l).n, i) for i, l in enumerate(data.labels)
    ])
    return X, Y, idx


def _train(data: MultiEnvDataset, cfg: BaselineConfig, lam: float) -> Mlp:
    X, Y, env_idx = _pool(data)
    n, d = X.shape
    net = mlp_init(MlpConfig(
        layer_widths=(d, *(cfg.width,) * cfg.depth, 1),
        batch_norm=cfg.batch_norm, dropout_p=cfg.dropout_p,
        seed=int(np.random.default_rng([cfg.seed, 2]).integers(2**31)),
    ))
    opt = adam_init(net, cfg.lr)
    rng = np.random.default_rng([cfg.seed, 3])
    n_env = len(data.labels)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            rows = perm[start:start + bs]
            xb, yb, eb = X[rows], Y[rows], env_idx[rows]
            out, cache = mlp_forward(net, xb, rng=rng)
            f = out[:, 0]
            resid = f - yb
            loss = float((resid * resid).mean())
            df = 2.0 * resid / bs
            for e in range(n_env):
                mask = eb == e
                ne = int(mask.sum())
                if ne == 0:
                    continue
                fe, ye = f[mask], yb[mask]
                g_e = 2.0 * float((fe * (fe - ye)).mean())
                loss += lam * g_e * g_e
                df[mask] += lam * 2.0 * g_e * (2.0 / ne) * (2.0 * fe - ye)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads, _ = mlp_backward(net, cache, df[:, None])
            adam_step(net, grads, opt)
    net.mode = "eval"
    return net


def train_erm(data: MultiEnvDataset, cfg: BaselineConfig) -> Mlp:
    """Pooled-MSE fit; the environment structure is ignored."""
    if cfg.kind != "erm":
        raise ConfigError(f"expected an erm config, got kind={cfg.kind!r}")
    if not data.labels:
        raise ContractError("training data is empty")
    return _train(data, cfg, lam=0.0)


def train_irm(data: MultiEnvDataset, cfg: BaselineConfig) -> Mlp:
    """IRM with the scalar-multiplier penalty weighted by irm_lambda."""
    if cfg.kind != "irm":
        raise ConfigError(f"expected an irm config, got kind={cfg.kind!r}")
    if len(data.labels) < 2:
        raise ContractError("the invariance penalty needs at least two environments")
    return _train(data, cfg, lam=cfg.irm_lambda)
