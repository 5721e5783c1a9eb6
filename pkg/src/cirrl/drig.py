"""Robust linear readout on learned latents.

Step two of the method: center every environment's latents and response
by the reference environment's empirical means, then solve

    b_hat = [(1-g) G0 + g sum_e w_e G_e]^{-1} [(1-g) m0 + g sum_e w_e m_e]

where G_e and m_e are per-environment second and cross moments of the
centered data and g is the robustness weight gamma.  gamma=0 is OLS on
the reference environment; gamma=1 with uniform weights is pooled least
squares; larger gamma extrapolates beyond the training heterogeneity.

The closed form comes from the first-order conditions of the objective

    L_gamma(b) = MSE0(b) + gamma * sum_e w_e (MSE_e(b) - MSE0(b)),

which places the environment's own response Y_e in the cross moment.
``eq5_literal=True`` instead uses the reference response in the
environment sum; that variant is kept only for comparison and needs
equal sample counts.  A plain gradient-descent minimizer of the same
objective doubles as an independent cross-check of the algebra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, RankDeficiencyError, ShapeError, StepSizeError
from .nn import Mlp, mlp_forward


@dataclass
class CenteredEnvData:
    """Latents/response per environment, centered by env-0 means."""

    labels: list
    Z_c: dict
    Y_c: dict
    weights: dict
    center_z: np.ndarray
    center_y: float

    @property
    def k(self) -> int:
        return self.center_z.shape[0]


def center(latents: dict, ys: dict, weights: dict | None = None) -> CenteredEnvData:
    """Subtract env-0 empirical means from every environment.

    ``latents`` maps label -> (n, k), ``ys`` maps label -> (n,).  When
    ``weights`` is omitted, w_e = n_e / n over all environments.
    """
    if 0 not in latents or 0 not in ys:
        raise ContractError("reference environment 0 is required for centering")
    labels = list(latents.keys())
    if set(labels) != set(ys.keys()):
        raise ContractError("latents and ys must cover the same environments")
    Z0 = np.asarray(latents[0], dtype=np.float64)
    if Z0.shape[0] < 2:
        raise ContractError("environment 0 needs at least 2 samples")
    center_z = Z0.mean(axis=0)
    center_y = float(np.asarray(ys[0], dtype=np.float64).mean())

    if weights is None:
        total = sum(np.asarray(latents[l]).shape[0] for l in labels)
        weights = {l: np.asarray(latents[l]).shape[0] / total for l in labels}
    else:
        weights = {l: float(w) for l, w in weights.items()}
        if set(weights.keys()) != set(labels):
            raise ContractError("weights must cover exactly the data's environments")
        if min(weights.values()) <= 0.0:
            raise ConfigError("environment weights must be positive")
        if abs(sum(weights.values()) - 1.0) > 1e-12:
            raise ConfigError(
                f"environment weights must sum to 1, got {sum(weights.values())!r}"
            )

    Z_c, Y_c = {}, {}
    for l in labels:
        Z = np.asarray(latents[l], dtype=np.float64)
        y = np.asarray(ys[l], dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != Z0.shape[1]:
            raise ShapeError(f"environment {l!r} latents have shape {Z.shape}")
        if y.shape != (Z.shape[0],):
            raise ShapeError(f"environment {l!r} response has shape {y.shape}")
        Z_c[l] = Z - center_z
        Y_c[l] = y - center_y
    return CenteredEnvData(labels, Z_c, Y_c, weights, center_z, center_y)


@dataclass
class DrigFit:
    b_hat: np.ndarray
    gamma: float
    gram: dict          # label -> (k, k) second moment of Z_c
    cross: dict         # label -> (k,)  cross moment with the response used
    objective: float
    eq5_literal: bool = False


def _moments(data: CenteredEnvData, eq5_literal: bool):
    gram, cross = {}, {}
    y0 = data.Y_c[0]
    for l in data.labels:
        Z = data.Z_c[l]
        n = Z.shape[0]
        gram[l] = Z.T @ Z / n
        if eq5_literal and l != 0:
            if y0.shape[0] != n:
                raise ContractError(
                    "the literal printed formula pairs every environment with the "
                    f"reference response; env {l!r} has {n} samples vs {y0.shape[0]}"
                )
            cross[l] = Z.T @ y0 / n
        else:
            cross[l] = Z.T @ data.Y_c[l] / n
    return gram, cross


def _combine(data: CenteredEnvData, gram: dict, cross: dict, gamma: float):
    A = (1.0 - gamma) * gram[0]
    a = (1.0 - gamma) * cross[0]
    for l in data.labels:
        w = data.weights[l]
        A = A + gamma * w * gram[l]
        a = a + gamma * w * cross[l]
    return A, a


def drig_closed_form(data: CenteredEnvData, gamma: float,
                     eq5_literal: bool = False) -> DrigFit:
    if gamma < 0.0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    gram, cross = _moments(data, eq5_literal)
    A, a = _combine(data, gram, cross, gamma)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficiencyError(
            f"gram combination is numerically singular: smallest singular value "
            f"{s[-1]:.6e}"
        )
    b = np.linalg.solve(A, a)
    fit = DrigFit(b_hat=b, gamma=float(gamma), gram=gram, cross=cross,
                  objective=0.0, eq5_literal=eq5_literal)
    fit.objective = drig_objective(data, b, gamma)
    return fit


def env_mses(data: CenteredEnvData, b: np.ndarray) -> dict:
    b = np.asarray(b, dtype=np.float64)
    out = {}
    for l in data.labels:
        r = data.Y_c[l] - data.Z_c[l] @ b
        out[l] = float((r * r).mean())
    return out


def drig_objective(data: CenteredEnvData, b, gamma: float) -> float:
    mses = env_mses(data, b)
    value = mses[0]
    for l in data.labels:
        value += gamma * data.weights[l] * (mses[l] - mses[0])
    return float(value)


def drig_fit_iterative(data: CenteredEnvData, gamma: float, steps: int = 20_000,
                       lr: float | None = None) -> np.ndarray:
    """Full-batch gradient descent on the objective from b = 0.

    Serves as an independent minimizer to cross-check the closed form;
    raises a step-size error when the objective rises 50 steps in a row.
    """
    gram, cross = _moments(data, eq5_literal=False)
    A, a = _combine(data, gram, cross, gamma)
    if lr is None:
        lam = np.linalg.eigvalsh(0.5 * (A + A.T))
        if lam[-1] <= 0.0:
            raise StepSizeError("quadratic form is not positive, objective unbounded")
        lr = 1.0 / (lam[-1] + max(lam[0], 0.0))
    b = np.zeros(data.k)
    prev = drig_objective(data, b, gamma)
    rises = 0
    for _ in range(steps):
        b = b - lr * 2.0 * (A @ b - a)
        value = drig_objective(data, b, gamma)
        if not np.isfinite(value):
            raise StepSizeError(f"objective became non-finite (lr={lr})")
        if value > prev:
            rises += 1
            if rises >= 50:
                raise StepSizeError(
                    f"objective increased for {rises} consecutive steps (lr={lr})"
                )
        else:
            rises = 0
        prev = value
    return b


@dataclass
class CirrlModel:
    """Encoder plus fitted readout; everything prediction needs."""

    enc: Mlp
    fit: DrigFit
    center_z: np.ndarray
    center_y: float


def predict_latents(fit: DrigFit, Z, center_z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != center_z.shape[0]:
        raise ShapeError(f"latents have shape {Z.shape}, expected (n, {center_z.shape[0]})")
    return (Z - center_z) @ fit.b_hat


def predict(model: CirrlModel, X) -> np.ndarray:
    """Centered-scale prediction b^T (enc(x) - env-0 latent mean); add
    model.center_y back for raw-scale reporting."""
    model.enc.mode = "eval"
    Z, _ = mlp_forward(model.enc, X)
    return predict_latents(model.fit, Z, model.center_z)


def fit_report(fit: DrigFit, data: CenteredEnvData) -> dict:
    """Audit dict mirroring the fit, ready for JSON serialization."""
    return {
        "gamma": fit.gamma,
        "b_hat": fit.b_hat,
        "per_env_mse": {str(l): v for l, v in env_mses(data, fit.b_hat).items()},
        "objective": fit.objective,
        "center_z": data.center_z,
        "center_y": data.center_y,
        "weights": {str(l): data.weights[l] for l in data.labels},
        "eq5_literal": fit.eq5_literal,
    }
