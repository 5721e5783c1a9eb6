"""Representation learning: joint training of encoder, decoder, and prior.

Minibatch Adam on the combined energy-score loss over pooled
multi-environment data.  Batches are drawn uniformly over all samples
(so environment weights n_e/n arise naturally), each paired with its
environment one-hot for the prior network.  Incomplete trailing batches
are dropped so every step sees the full batch size — batch statistics
stay comparable across steps and epochs.

Training runs a fixed number of epochs (no early stopping).  The raw
per-epoch mean losses are recorded as the trace; the reported final
loss is the running minimum of the combined loss over epochs, which
makes elbow tables insensitive to late-epoch noise.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SchemaError, ShapeError, TrainingDivergedError
from .losses import g_output_dim, loss_rl, make_energy_batch
from .nn import (
    Mlp,
    MlpConfig,
    adam_init,
    adam_step,
    dumps_json,
    mlp_forward,
    mlp_from_dict,
    mlp_init,
    mlp_to_dict,
)
from .scm import MultiEnvDataset

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ReprTrainConfig:
    latent_dim: int
    width: int = 400
    depth: int = 2
    alpha: float = 0.1
    lr: float = 1e-4
    epochs: int = 1000
    batch_size: int = 256
    dec_noise_dim: int | None = None    # defaults to the data dimension d
    m: int = 2
    batch_norm: bool = True
    g_batch_norm: bool = False          # one-hot input; normalization optional
    g_full_scale: bool = False          # full lower-triangular prior scale
    standardize: bool = True            # train on (X - mean) / std internally
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.width < 1 or self.depth < 1:
            raise ConfigError("width and depth must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch statistics")
        if self.m < 2:
            raise ConfigError(f"m must be >= 2 for the pair term, got {self.m}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class ReprModel:
    enc: Mlp
    dec: Mlp
    g: Mlp
    config: ReprTrainConfig
    env_labels: list
    # input standardization owned by the model: enc consumes
    # (x - x_mean) / x_scale, reconstructions are mapped back
    x_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    # trace columns: per-epoch mean of (loss_dpa, loss_g, loss_rl)

    @property
    def k(self) -> int:
        return self.config.latent_dim

    @property
    def final_loss(self) -> float:
        """Minimum per-epoch mean combined loss (noise-robust endpoint)."""
        if self.trace.shape[0] == 0:
            return float("nan")
        return float(self.trace[:, 2].min())


def _net_configs(cfg: ReprTrainConfig, d: int, n_env: int):
    k = cfg.latent_dim
    noise_dim = cfg.dec_noise_dim if cfg.dec_noise_dim is not None else d
    hidden = (cfg.width,) * cfg.depth
    rng = np.random.default_rng([cfg.seed, 0])
    seeds = rng.integers(2**31, size=3)
    enc = MlpConfig(layer_widths=(d, *hidden, k), batch_norm=cfg.batch_norm,
                    seed=int(seeds[0]))
    dec = MlpConfig(layer_widths=(k + noise_dim, *hidden, d),
                    batch_norm=cfg.batch_norm, seed=int(seeds[1]))
    g = MlpConfig(layer_widths=(n_env, *hidden, g_output_dim(k, cfg.g_full_scale)),
                  batch_norm=cfg.g_batch_norm, seed=int(seeds[2]))
    return enc, dec, g, noise_dim


def _pool(data: MultiEnvDataset):
    X = np.vstack([data.env(l).X for l in data.labels])
    idx = np.concatenate([
        np.full(data.env(l).n, i) for i, l in enumerate(data.labels)
    ])
    return X, idx


def _standardizer(X: np.ndarray, cfg: ReprTrainConfig):
    """Pooled per-coordinate affine normalization (identity when off).
    Constant coordinates keep scale 1 so the transform stays invertible."""
    if not cfg.standardize:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return mean, scale


def init_representation(data: MultiEnvDataset, cfg: ReprTrainConfig) -> ReprModel:
    """The untrained model the trainer would start from (for baselines of
    training-progress checks)."""
    enc_cfg, dec_cfg, g_cfg, _ = _net_configs(cfg, data.d, len(data.labels))
    enc, dec, g = mlp_init(enc_cfg), mlp_init(dec_cfg), mlp_init(g_cfg)
    for net in (enc, dec, g):
        net.mode = "eval"
    x_mean, x_scale = _standardizer(_pool(data)[0], cfg)
    return ReprModel(enc=enc, dec=dec, g=g, config=cfg,
                     env_labels=list(data.labels),
                     x_mean=x_mean, x_scale=x_scale)


def train_representation(data: MultiEnvDataset, cfg: ReprTrainConfig) -> ReprModel:
    """Joint minibatch training of the three networks; deterministic per seed."""
    if 0 not in data.labels or len(data.labels) < 2:
        raise ConfigError("training needs at least two environments including 0")
    X, env_idx = _pool(data)
    x_mean, x_scale = _standardizer(X, cfg)
    X = (X - x_mean) / x_scale
    n, d = X.shape
    enc_cfg, dec_cfg, g_cfg, noise_dim = _net_configs(cfg, d, len(data.labels))
    enc, dec, g = mlp_init(enc_cfg), mlp_init(dec_cfg), mlp_init(g_cfg)
    opt = [adam_init(net, cfg.lr) for net in (enc, dec, g)]
    rng = np.random.default_rng([cfg.seed, 1])

    bs = min(cfg.batch_size, n)
    trace = np.zeros((cfg.epochs, 3))
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = [0.0, 0.0, 0.0]
        n_batches = 0
        for start in range(0, n - bs + 1, bs):
            rows = perm[start:start + bs]
            batch = make_energy_batch(X[rows], env_idx[rows], len(data.labels),
                                      cfg.m, noise_dim, cfg.latent_dim, rng)
            (v_rl, v_dpa, v_prior), grads = loss_rl(enc, dec, g, batch, cfg.alpha,
                                                    rng=rng,
                                                    full_scale=cfg.g_full_scale)
            if not math.isfinite(v_rl):
                raise TrainingDivergedError(epoch)
            adam_step(enc, grads.enc, opt[0])
            adam_step(dec, grads.dec, opt[1])
            adam_step(g, grads.g, opt[2])
            sums[0] += v_dpa
            sums[1] += v_prior
            sums[2] += v_rl
            n_batches += 1
        trace[epoch] = [s / n_batches for s in sums]
    for net in (enc, dec, g):
        net.mode = "eval"
    return ReprModel(enc=enc, dec=dec, g=g, config=cfg,
                     env_labels=list(data.labels),
                     x_mean=x_mean, x_scale=x_scale, trace=trace)


def encode(model: ReprModel, X) -> np.ndarray:
    """Deterministic eval-mode latents, n x k."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.enc.config.in_dim:
        raise ShapeError(f"expected (n, {model.enc.config.in_dim}) inputs, got {X.shape}")
    model.enc.mode = "eval"
    Z, _ = mlp_forward(model.enc, (X - model.x_mean) / model.x_scale)
    return Z


def sample_reconstruction(model: ReprModel, X, rng: np.random.Generator) -> np.ndarray:
    """Stochastic decode of enc(X) with fresh standard-normal noise."""
    Z = encode(model, X)
    noise_dim = model.dec.config.in_dim - model.k
    eps = rng.standard_normal((Z.shape[0], noise_dim))
    model.dec.mode = "eval"
    Xhat, _ = mlp_forward(model.dec, np.column_stack([Z, eps]))
    return Xhat * model.x_scale + model.x_mean


def prior_moments(model: ReprModel, label) -> tuple[np.ndarray, np.ndarray]:
    """Mean and scale of the learned per-environment latent component.

    The scale is a (k,) vector of per-coordinate standard deviations for
    the diagonal parameterization, or a (k, k) lower-triangular factor
    when the model was trained with a full scale matrix.
    """
    if label not in model.env_labels:
        raise ConfigError(f"unknown environment label {label!r}")
    onehot = np.zeros((1, len(model.env_labels)))
    onehot[0, model.env_labels.index(label)] = 1.0
    model.g.mode = "eval"
    out, _ = mlp_forward(model.g, onehot)
    k = model.k
    if model.config.g_full_scale:
        L = np.zeros((k, k))
        L[np.tril_indices(k)] = out[0, k:]
        return out[0, :k], L
    return out[0, :k], np.exp(out[0, k:])


def sample_prior(model: ReprModel, label, n: int, rng: np.random.Generator) -> np.ndarray:
    mu, scale = prior_moments(model, label)
    noise = rng.standard_normal((n, model.k))
    if model.config.g_full_scale:
        return mu + noise @ scale.T
    return mu + noise * scale


def latent_dim_sweep(data: MultiEnvDataset, cfg: ReprTrainConfig, dims) -> list[dict]:
    """One training per candidate latent dimension, shared seed; failures
    are recorded per dimension and do not stop the sweep."""
    dims = list(dims)
    if not dims or sorted(dims) != dims or dims[0] < 1:
        raise ConfigError(f"dims must be nonempty ascending positive, got {dims}")
    rows = []
    for dim in dims:
        try:
            model = train_representation(data, replace(cfg, latent_dim=dim))
            rows.append({"dim": dim, "final_loss": model.final_loss, "error": None})
        except Exception as exc:  # keep remaining dims alive
            rows.append({"dim": dim, "final_loss": float("nan"),
                         "error": f"{type(exc).__name__}: {exc}"})
    return rows


# ------------------------------------------------------------- checkpoints


def _trace_path(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base + ".trace.csv"


def save_checkpoint(model: ReprModel, path: str) -> None:
    """JSON checkpoint plus a per-epoch loss trace CSV sidecar."""
    cfg = model.config
    payload = {
        "version": CHECKPOINT_VERSION,
        "k": cfg.latent_dim,
        "alpha": cfg.alpha,
        "env_labels": [str(l) for l in model.env_labels],
        "config": {
            "latent_dim": cfg.latent_dim, "width": cfg.width, "depth": cfg.depth,
            "alpha": cfg.alpha, "lr": cfg.lr, "epochs": cfg.epochs,
            "batch_size": cfg.batch_size, "dec_noise_dim": cfg.dec_noise_dim,
            "m": cfg.m, "batch_norm": cfg.batch_norm,
            "g_batch_norm": cfg.g_batch_norm, "g_full_scale": cfg.g_full_scale,
            "standardize": cfg.standardize, "seed": cfg.seed,
        },
        "x_mean": model.x_mean.tolist(),
        "x_scale": model.x_scale.tolist(),
        "enc": mlp_to_dict(model.enc),
        "dec": mlp_to_dict(model.dec),
        "g": mlp_to_dict(model.g),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(payload))
    with open(_trace_path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_dpa", "loss_g", "loss_rl"])
        for epoch, (dpa, g_loss, rl) in enumerate(model.trace):
            writer.writerow([epoch, f"{dpa:.17g}", f"{g_loss:.17g}", f"{rl:.17g}"])


def load_checkpoint(path: str) -> ReprModel:
    import json

    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("version", "config", "enc", "dec", "g", "env_labels",
                "x_mean", "x_scale"):
        if key not in payload:
            raise SchemaError(f"checkpoint missing field {key!r}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {payload['version']!r}")
    raw = dict(payload["config"])
    raw["dec_noise_dim"] = raw.get("dec_noise_dim")
    cfg = ReprTrainConfig(**raw)
    env_labels = [int(l) if l.lstrip("-").isdigit() else l
                  for l in payload["env_labels"]]
    trace = np.zeros((0, 3))
    tpath = _trace_path(path)
    if os.path.exists(tpath):
        with open(tpath, encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["epoch", "loss_dpa", "loss_g", "loss_rl"]:
                raise SchemaError(f"unexpected trace header {header}")
            rows = [[float(v) for v in row[1:]] for row in reader]
        trace = np.asarray(rows) if rows else np.zeros((0, 3))
    return ReprModel(enc=mlp_from_dict(payload["enc"]),
                     dec=mlp_from_dict(payload["dec"]),
                     g=mlp_from_dict(payload["g"]),
                     config=cfg, env_labels=env_labels,
                     x_mean=np.asarray(payload["x_mean"], dtype=np.float64),
                     x_scale=np.asarray(payload["x_scale"], dtype=np.float64),
                     trace=trace)
