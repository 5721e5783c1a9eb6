"""Worst-case-risk machinery for robust evaluation.

Four pieces, all pure computations:

* the plug-in worst-case risk of a fitted predictor over the training
  environments, MSE0 + gamma * sum_e w_e (MSE_e - MSE0) — an affine
  function of gamma whose slope measures training heterogeneity;
* the uncertainty-set bound matrix T(gamma) = S0 + gamma * sum_e w_e
  (S_e - S0 + mu_e mu_e^T) built from intervention moments, with a PSD
  membership test for candidate test-perturbation second moments;
* a brute-force sup oracle for linear ground truth, where the worst-case
  risk has the closed form  w^T Sigma_eps w + w^T T w  with
  w = C[k,:] - b^T C[:k,:] and C = (I - B)^{-1} — cross-checked by
  enumerating perturbation directions v = T^{1/2} u over the unit ball;
* a Monte-Carlo check that E[X | MX] is affine in MX for elliptical X,
  the population fact that licenses reading the linear theory through a
  nonlinear decoder.

Plus OOD evaluation of raw-scale predictions and the affine-link
diagnostic regressing learned latents on true ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drig import CirrlModel, predict
from .errors import ContractError, DataError, RankDeficiencyError, ShapeError
from .scm import MultiEnvDataset, TestEnvData


def _raw_predictions(predictor, X) -> np.ndarray:
    """Raw-scale predictions from either a fitted model or a callable."""
    if isinstance(predictor, CirrlModel):
        return predict(predictor, X) + predictor.center_y
    yhat = np.asarray(predictor(X), dtype=np.float64).reshape(-1)
    if yhat.shape[0] != np.asarray(X).shape[0]:
        raise ShapeError(f"predictor returned {yhat.shape[0]} values for "
                         f"{np.asarray(X).shape[0]} inputs")
    return yhat


def env_mse_report(predictor, data: MultiEnvDataset, weights: dict | None = None):
    """Per-environment MSEs and their weights, shared by all plug-in uses."""
    if 0 not in data.labels:
        raise ContractError("reference environment 0 is required")
    if weights is None:
        total = sum(data.env(l).n for l in data.labels)
        weights = {l: data.env(l).n / total for l in data.labels}
    mses = {}
    for l in data.labels:
        env = data.env(l)
        r = env.Y - _raw_predictions(predictor, env.X)
        mses[l] = float((r * r).mean())
    return mses, weights


def worst_case_plugin(predictor, data: MultiEnvDataset, gamma: float,
                      weights: dict | None = None) -> float:
    """Empirical worst-case risk MSE0 + gamma * sum_e w_e (MSE_e - MSE0).

    The model's own centering is applied inside prediction, so residuals
    here equal the centered-scale residuals used by the fit.
    """
    mses, weights = env_mse_report(predictor, data, weights)
    slope = math.fsum(weights[l] * (mses[l] - mses[0]) for l in data.labels)
    return mses[0] + gamma * slope


@dataclass
class UncertaintyBound:
    gamma: float
    T: np.ndarray

    def contains(self, second_moment) -> bool:
        """Whether E[vv^T] <= T up to a -1e-8 I eigenvalue tolerance."""
        M = _check_symmetric(second_moment, "test second moment")
        return float(np.linalg.eigvalsh(self.T - M)[0]) >= -1e-8


def _check_symmetric(S, name: str) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"{name} must be square, got {S.shape}")
    if not np.allclose(S, S.T, atol=1e-10):
        raise DataError(f"{name} is not symmetric")
    return S


def uncertainty_bound(interventions, gamma: float,
                      weights=None) -> UncertaintyBound:
    """T(gamma) from per-environment intervention moments.

    ``interventions`` is a sequence of objects with ``mu`` and ``sigma``
    (mean and covariance of the additive perturbation), environment 0
    first.  Weights default to uniform over all environments given.
    """
    moments = [( np.asarray(iv.mu, dtype=np.float64),
                 _check_symmetric(iv.sigma, "intervention covariance"))
               for iv in interventions]
    n_env = len(moments)
    if n_env == 0:
        raise ContractError("at least the reference environment is required")
    if weights is None:
        weights = [1.0 / n_env] * n_env
    weights = [float(w) for w in weights]
    if len(weights) != n_env or min(weights) <= 0:
        raise ContractError("need one positive weight per environment")
    S0 = moments[0][1]
    T = S0.copy()
    for (mu, S), w in zip(moments, weights):
        T = T + gamma * w * (S - S0 + np.outer(mu, mu))
    return UncertaintyBound(gamma=float(gamma), T=0.5 * (T + T.T))


def _psd_sqrt(T, name: str = "bound matrix") -> np.ndarray:
    T = _check_symmetric(T, name)
    lam, V = np.linalg.eigh(T)
    if lam[0] < -1e-10 * max(1.0, lam[-1]):
        raise DataError(f"{name} is not positive semidefinite: "
                        f"eigenvalue {lam[0]:.6e}")
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def sup_candidates(T, w, n_candidates: int = 1000):
    """Enumerate quadratic-form values (w^T T^{1/2} u)^2 over unit-ball
    directions u, including the analytic argmax direction.

    Returns (candidate values, analytic sup w^T T w, value at argmax).
    """
    w = np.asarray(w, dtype=np.float64)
    root = _psd_sqrt(T)
    analytic = float(w @ np.asarray(T, dtype=np.float64) @ w)
    rng = np.random.default_rng(0)
    us = rng.normal(size=(n_candidates, w.shape[0]))
    norms = np.linalg.norm(us, axis=1)
    us = us / np.maximum(norms, 1e-300)[:, None]
    star = root @ w
    star_norm = np.linalg.norm(star)
    if star_norm > 0:
        us[0] = star / star_norm
    vals = (us @ root @ w) ** 2
    return vals, analytic, float(vals[0])


def mc_sup_oracle(B, eps_cov, b, T, n_candidates: int = 1000) -> float:
    """Analytic worst-case risk in a linear world, with an enumeration
    cross-check that the sup is attained along u ∝ T^{1/2} w."""
    B = np.asarray(B, dtype=np.float64)
    C = np.linalg.solve(np.eye(B.shape[0]) - B, np.eye(B.shape[0]))
    b = np.asarray(b, dtype=np.float64)
    k = b.shape[0]
    if B.shape[0] != k + 1:
        raise ShapeError(f"coefficients of length {k} need a {k + 1}-node system, "
                         f"got {B.shape[0]}")
    w = C[k, :] - b @ C[:k, :]
    base = float(w @ np.asarray(eps_cov, dtype=np.float64) @ w)
    vals, analytic, at_star = sup_candidates(T, w, n_candidates)
    if vals.max() > analytic + 1e-10:
        raise ContractError("candidate enumeration exceeded the analytic sup")
    if analytic - at_star > 1e-6:
        raise ContractError(
            f"sup not attained along the analytic direction: gap {analytic - at_star:.3e}"
        )
    return base + analytic


def sample_elliptical(Sigma, family: str, n: int, rng, nu: float = 5.0) -> np.ndarray:
    """Mean-zero elliptical draws with scatter matrix Sigma."""
    Sigma = _check_symmetric(Sigma, "scatter matrix")
    L = np.linalg.cholesky(Sigma)
    X = rng.normal(size=(n, Sigma.shape[0])) @ L.T
    if family == "gaussian":
        return X
    if family == "student_t":
        u = rng.chisquare(nu, size=n)
        return X * np.sqrt(nu / u)[:, None]
    raise ContractError(f"unknown elliptical family {family!r}")


def elliptical_condexp_oracle(Sigma, M, family: str, n: int,
                              nu: float = 5.0, seed: int = 0) -> float:
    """Max-entry error between the sampled regression slope of X on MX
    and the analytic slope Sigma M^T (M Sigma M^T)^{-1}."""
    Sigma = _check_symmetric(Sigma, "scatter matrix")
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-10 * s[0] or M.shape[0] > M.shape[1]:
        raise ContractError("conditioning map must have full row rank")
    X = sample_elliptical(Sigma, family, n, np.random.default_rng(seed), nu=nu)
    proj = X @ M.T
    design = np.column_stack([np.ones(n), proj])
    coef, *_ = np.linalg.lstsq(design, X, rcond=None)
    slope = coef[1:, :].T                      # (d, r): rows predict X coords
    analytic = Sigma @ M.T @ np.linalg.inv(M @ Sigma @ M.T)
    return float(np.abs(slope - analytic).max())


def ood_mse(predictor, test_env: TestEnvData) -> float:
    """Mean squared error of raw-scale predictions on a test environment."""
    yhat = _raw_predictions(predictor, test_env.X)
    r = test_env.Y - yhat
    return float((r * r).mean())


@dataclass
class AffineLink:
    N: np.ndarray
    m: np.ndarray
    r2: np.ndarray            # per learned coordinate
    cond: float               # condition number of N


def fit_affine_link(Z_true, Z_learned) -> AffineLink:
    """Least-squares fit Z_learned ≈ N Z_true + m, with per-coordinate R²."""
    Z_true = np.asarray(Z_true, dtype=np.float64)
    Z_learned = np.asarray(Z_learned, dtype=np.float64)
    if Z_true.ndim != 2 or Z_learned.ndim != 2 or Z_true.shape[0] != Z_learned.shape[0]:
        raise ShapeError(f"row mismatch: {Z_true.shape} vs {Z_learned.shape}")
    n, k = Z_true.shape
    if n <= k:
        raise ContractError(f"need more samples than latent dims, got {n} <= {k}")
    design = np.column_stack([Z_true, np.ones(n)])
    s = np.linalg.svd(design, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficiencyError(
            f"true-latent design is numerically singular: smallest singular value {s[-1]:.6e}"
        )
    coef, *_ = np.linalg.lstsq(design, Z_learned, rcond=None)
    N = coef[:k, :].T
    m = coef[k, :]
    resid = Z_learned - design @ coef
    total = Z_learned - Z_learned.mean(axis=0)
    sst = (total * total).sum(axis=0)
    ssr = (resid * resid).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - ssr / sst, 0.0)
    sv = np.linalg.svd(N, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return AffineLink(N=N, m=m, r2=r2, cond=cond)


@dataclass
class RobustnessReport:
    model_id: str
    dataset_id: str
    env_mse: dict
    plugin: dict = field(default_factory=dict)   # gamma -> risk
    ood: dict = field(default_factory=dict)      # family label -> mse

    def rows(self):
        out = []
        for gamma in sorted(self.plugin):
            row = {"model": self.model_id, "dataset": self.dataset_id,
                   "gamma": gamma, "plugin_risk": self.plugin[gamma]}
            for l in sorted(self.env_mse):
                row[f"mse_env_{l}"] = self.env_mse[l]
            out.append(row)
        for fam in sorted(self.ood):
            out.append({"model": self.model_id, "dataset": self.dataset_id,
                        "ood_family": fam, "ood_mse": self.ood[fam]})
        return out


def robustness_report(predictor, data: MultiEnvDataset, gamma_grid,
                      ood_envs: dict | None = None, model_id: str = "model",
                      dataset_id: str = "dataset") -> RobustnessReport:
    grid = [float(g) for g in gamma_grid]
    if any(g < 0 for g in grid) or sorted(grid) != grid:
        raise ContractError("gamma grid must be nonnegative and increasing")
    mses, weights = env_mse_report(predictor, data)
    slope = math.fsum(weights[l] * (mses[l] - mses[0]) for l in data.labels)
    report = RobustnessReport(model_id, dataset_id, env_mse=mses)
    for g in grid:
        report.plugin[g] = mses[0] + g * slope
    for fam, env in (ood_envs or {}).items():
        report.ood[fam] = ood_mse(predictor, env)
    return report
