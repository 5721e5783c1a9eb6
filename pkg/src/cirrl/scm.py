"""Synthetic multi-environment generator.

Ground truth is a linear structural-equation model over k latent
variables plus a response: a random DAG with standard-normal edge
weights, Gaussian system noise, and per-environment additive mean-shift
interventions with random PSD covariances.  Observations are a fixed
nonlinear decoder applied to the latents.  Test environments add a
perturbation v whose strength is a single knob eta; v can be Gaussian,
jointly Student-t (elliptical, well-specified) or coordinatewise chi^2
(misspecified).

Node ordering: latents come first, the response is the last coordinate,
and B is strictly lower-triangular, so the response is a sink that reads
only latents and earlier latents feed later ones.  Samples are built by
forward substitution through the node equations; the raw noise rows are
kept on the dataset so the node-equation residual can be audited
exactly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    GenerationError,
    PerturbationTooStrongError,
    ShapeError,
)
from .nn import Mlp, MlpConfig, mlp_forward, mlp_init

FAMILIES = ("gaussian", "student_t", "chi2")


@dataclass(frozen=True)
class GenConfig:
    k: int = 2
    d: int = 10
    num_envs: int = 5          # including the observational env 0
    n_per_env: int = 2000
    decoder: str = "polynomial"
    decoder_degree: int = 2
    decoder_widths: tuple[int, ...] = (64, 64)
    eta: float = 0.0
    noise_family: str = "gaussian"
    nu: float = 3.0
    mu_v: tuple[float, ...] | None = None
    exclude_y: bool = False
    enforce_assumption1: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.d < max(2, self.k):
            raise ConfigError(f"d must be >= max(2, k), got d={self.d} k={self.k}")
        if self.num_envs < 1:
            raise ConfigError(f"num_envs must be >= 1, got {self.num_envs}")
        if self.n_per_env < 2:
            raise ConfigError(f"n_per_env must be >= 2, got {self.n_per_env}")
        if self.decoder not in ("polynomial", "relu_net"):
            raise ConfigError(f"unknown decoder kind {self.decoder!r}")
        if self.eta < 0.0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.noise_family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.noise_family!r}")
        if self.noise_family == "student_t" and self.nu < 1.0:
            raise ConfigError(f"student_t needs nu >= 1, got {self.nu}")
        if self.mu_v is not None:
            object.__setattr__(self, "mu_v", tuple(float(x) for x in self.mu_v))
            if len(self.mu_v) != self.k + 1:
                raise ConfigError("mu_v must have k+1 entries")
        object.__setattr__(self, "decoder_widths",
                           tuple(int(w) for w in self.decoder_widths))


@dataclass
class EnvIntervention:
    mu: np.ndarray          # (k+1,), unit norm before any exclusion zeroing
    sigma: np.ndarray       # (k+1, k+1) PSD, spectral norm 1 before zeroing


@dataclass
class EnvData:
    label: int | str
    X: np.ndarray
    Y: np.ndarray
    Z_true: np.ndarray | None = None
    delta_mu: np.ndarray | None = None
    delta_sigma: np.ndarray | None = None
    noise: np.ndarray | None = None  # (n, k+1) rows of eps + delta, for audits

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class MultiEnvDataset:
    envs: list[EnvData]

    def __post_init__(self):
        labels = [e.label for e in self.envs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate environment labels: {labels}")
        dims = {e.X.shape[1] for e in self.envs}
        if len(dims) > 1:
            raise ShapeError(f"environments disagree on d: {sorted(dims)}")

    @property
    def labels(self) -> list:
        return [e.label for e in self.envs]

    @property
    def d(self) -> int:
        return self.envs[0].X.shape[1]

    def env(self, label) -> EnvData:
        for e in self.envs:
            if e.label == label:
                return e
        raise KeyError(f"no environment labeled {label!r}")


@dataclass
class TestEnvData:
    __test__ = False  # not a pytest case despite the Test* name

    family: str
    eta: float
    X: np.ndarray
    Y: np.ndarray
    Z_true: np.ndarray
    mu_v: np.ndarray
    cov_v: np.ndarray       # covariance of v actually used (gaussian branch)
    v: np.ndarray           # audit: the raw perturbation draws
    noise: np.ndarray       # audit: rows fed into the node equations
    nu: float | None = None


# ---------------------------------------------------------------------------
# random building blocks


def sample_dag(k: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Random DAG over k latents plus the response as the last node.

    Every edge from a lower-index node into a higher-index one is kept
    independently with probability 1/2 and weighted N(0,1), so B is
    strictly lower-triangular and (I - B) is unit-triangular, hence
    always invertible.  Returns (B, C) with C = (I - B)^{-1}.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = k + 1
    keep = rng.random((p, p)) < 0.5
    weights = rng.standard_normal((p, p))
    B = np.where(np.tril(keep, k=-1), weights, 0.0)
    C = np.linalg.solve(np.eye(p) - B, np.eye(p))
    return B, C


def psd_norm1(dim: int, seed) -> np.ndarray:
    """Gram matrix of a square standard-normal draw, scaled so the top
    eigenvalue is exactly one (spectral norm 1)."""
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim))
    G = A @ A.T
    G = 0.5 * (G + G.T)
    top = np.linalg.eigvalsh(G)[-1]
    return G / top


def unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def xi_eta(interventions: list[EnvIntervention], eta: float) -> np.ndarray:
    """(eta / |E|) * sum_e (Sigma_e + mu_e mu_e^T) over the given
    environment list; pass all environments including the observational
    one (whose moments are zero) so |E| matches the paper's count."""
    if not interventions:
        raise ConfigError("xi_eta needs at least one environment")
    p = interventions[0].mu.shape[0]
    total = np.zeros((p, p))
    for iv in interventions:
        total += iv.sigma + np.outer(iv.mu, iv.mu)
    return (eta / len(interventions)) * total


def _psd_factor(S: np.ndarray, name: str) -> np.ndarray:
    """A with A A^T = S for a PSD matrix; raises naming the offending
    eigenvalue when S is materially indefinite."""
    S = 0.5 * (S + S.T)
    lam, U = np.linalg.eigh(S)
    floor = -1e-10 * max(1.0, float(lam[-1]))
    if lam[0] < floor:
        raise PerturbationTooStrongError(
            f"{name} is not positive semidefinite: eigenvalue {lam[0]:.6e}"
        )
    lam = np.clip(lam, 0.0, None)
    return U * np.sqrt(lam)


# ---------------------------------------------------------------------------
# decoders


def _monomial_exponents(k: int, degree: int) -> np.ndarray:
    """Exponent vectors for all monomials of total degree 1..degree in k
    variables (no constant term), degree-major then lexicographic."""
    rows = []
    for q in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), q):
            e = np.zeros(k, dtype=np.int64)
            for v in combo:
                e[v] += 1
            rows.append(e)
    return np.stack(rows)


class PolynomialDecoder:
    kind = "polynomial"

    def __init__(self, coeff: np.ndarray, k: int, degree: int):
        self.degree = int(degree)
        self.k = int(k)
        self.exponents = _monomial_exponents(k, degree)
        coeff = np.asarray(coeff, dtype=np.float64)
        if coeff.shape[1] != len(self.exponents):
            raise ShapeError(
                f"coeff has {coeff.shape[1]} columns, need {len(self.exponents)} "
                f"monomials for k={k} degree<={degree}"
            )
        self.coeff = coeff

    @property
    def d(self) -> int:
        return self.coeff.shape[0]

    def features(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        cols = [np.prod(Z ** e, axis=1) for e in self.exponents]
        return np.stack(cols, axis=1)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """d x k Jacobian of the decoder at a single point z."""
        z = np.asarray(z, dtype=np.float64)
        J_feat = np.zeros((len(self.exponents), self.k))
        for f, e in enumerate(self.exponents):
            for v in range(self.k):
                if e[v] > 0:
                    e_minus = e.copy()
                    e_minus[v] -= 1
                    J_feat[f, v] = e[v] * np.prod(z ** e_minus)
        return self.coeff @ J_feat

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        return self.features(Z) @ self.coeff.T


class ReluNetDecoder:
    kind = "relu_net"

    def __init__(self, net: Mlp):
        net.mode = "eval"
        self.net = net

    @property
    def d(self) -> int:
        return self.net.config.out_dim

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(self.net, Z)
        return out


DECODER_RANK_POINTS = 50
DECODER_MAX_RESAMPLES = 20


def make_decoder(cfg: GenConfig, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg.decoder == "relu_net":
        widths = (cfg.k, *cfg.decoder_widths, cfg.d)
        net = mlp_init(MlpConfig(layer_widths=widths,
                                 seed=int(rng.integers(0, 2 ** 31))))
        return ReluNetDecoder(net)
    n_feat = len(_monomial_exponents(cfg.k, cfg.decoder_degree))
    for _ in range(DECODER_MAX_RESAMPLES):
        coeff = rng.standard_normal((cfg.d, n_feat))
        dec = PolynomialDecoder(coeff, cfg.k, cfg.decoder_degree)
        points = rng.standard_normal((DECODER_RANK_POINTS, cfg.k))
        ok = True
        for z in points:
            s = np.linalg.svd(dec.jacobian(z), compute_uv=False)
            # rank k needs a k-th singular value well above roundoff
            if len(s) < cfg.k or s[cfg.k - 1] <= 1e-8 * s[0]:
                ok = False
                break
        if ok:
            return dec
    raise GenerationError(
        f"no full-rank polynomial decoder found in {DECODER_MAX_RESAMPLES} resamples"
    )


# ---------------------------------------------------------------------------
# the system


@dataclass
class ScmSystem:
    config: GenConfig
    B: np.ndarray
    C: np.ndarray
    eps_cov: np.ndarray
    interventions: list[EnvIntervention]  # index 0 is the observational env
    decoder: PolynomialDecoder | ReluNetDecoder

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def d(self) -> int:
        return self.config.d

    @classmethod
    def from_config(cls, cfg: GenConfig) -> "ScmSystem":
        """Deterministic construction; the draw order below is part of
        the reproducibility contract."""
        rng = np.random.default_rng([cfg.seed, 0])
        B, C = sample_dag(cfg.k, rng)
        eps_cov = psd_norm1(cfg.k + 1, rng)
        p = cfg.k + 1
        interventions = [EnvIntervention(np.zeros(p), np.zeros((p, p)))]
        for _ in range(1, cfg.num_envs):
            sigma = psd_norm1(p, rng)
            mu = unit_vector(p, rng)
            if cfg.exclude_y:
                mu = mu.copy()
                mu[-1] = 0.0
                sigma = sigma.copy()
                sigma[-1, :] = 0.0
                sigma[:, -1] = 0.0
            interventions.append(EnvIntervention(mu, sigma))
        decoder = make_decoder(cfg, rng)
        return cls(cfg, B, C, eps_cov, interventions, decoder)

    def xi(self, eta: float) -> np.ndarray:
        return xi_eta(self.interventions, eta)

    def default_mu_v(self, eta: float) -> np.ndarray:
        total = np.zeros(self.k + 1)
        for iv in self.interventions:
            total += iv.mu
        return (eta / len(self.interventions)) * total


def _forward_substitute(B: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Solve node = B node + noise row by row.  The residual audit in
    node_residual repeats these exact expressions, so it is zero
    bit-for-bit, not just numerically."""
    n, p = noise.shape
    ZY = np.zeros((n, p))
    for i in range(p):
        ZY[:, i] = noise[:, i] + ZY[:, :i] @ B[i, :i]
    return ZY


def node_residual(B: np.ndarray, ZY: np.ndarray, noise: np.ndarray) -> np.ndarray:
    p = noise.shape[1]
    res = np.empty_like(noise)
    for i in range(p):
        res[:, i] = ZY[:, i] - (noise[:, i] + ZY[:, :i] @ B[i, :i])
    return res


def generate_train(cfg: GenConfig) -> tuple[ScmSystem, MultiEnvDataset]:
    """Build the system and draw all training environments."""
    sys = ScmSystem.from_config(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    eps_factor = _psd_factor(sys.eps_cov, "eps_cov")
    envs = []
    for label, iv in enumerate(sys.interventions):
        eps = rng.standard_normal((cfg.n_per_env, cfg.k + 1)) @ eps_factor.T
        if label == 0:
            noise = eps
        else:
            sig_factor = _psd_factor(iv.sigma, f"env {label} sigma")
            delta = iv.mu + rng.standard_normal((cfg.n_per_env, cfg.k + 1)) @ sig_factor.T
            noise = eps + delta
        ZY = _forward_substitute(sys.B, noise)
        Z = ZY[:, : cfg.k]
        envs.append(
            EnvData(
                label=label,
                X=sys.decoder(Z),
                Y=ZY[:, cfg.k],
                Z_true=Z,
                delta_mu=iv.mu.copy(),
                delta_sigma=iv.sigma.copy(),
                noise=noise,
            )
        )
    return sys, MultiEnvDataset(envs)


def _assumption1_projection(sys: ScmSystem, xi: np.ndarray, mu_v: np.ndarray,
                            max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Project mu_v onto the subspace {Cov[eps+v] M^T a} with M the
    latent rows of C.  Cov[eps+v] itself depends on the projected mean,
    so iterate the projection to a fixed point."""
    M = sys.C[: sys.k, :]
    mu = mu_v.copy()
    for _ in range(max_iter):
        cov_v = xi - np.outer(mu, mu)
        sigma_total = sys.eps_cov + cov_v
        basis = sigma_total @ M.T
        Q, _ = np.linalg.qr(basis)
        mu_next = Q @ (Q.T @ mu_v)
        if np.linalg.norm(mu_next - mu) <= tol:
            return mu_next
        mu = mu_next
    raise GenerationError("assumption-1 projection did not converge")


def generate_test(sys: ScmSystem, cfg: GenConfig, n: int,
                  seed: int = 0) -> TestEnvData:
    """Draw one OOD test environment at cfg.eta under cfg.noise_family."""
    if n < 2:
        raise ConfigError(f"n must be >= 2, got {n}")
    k = sys.k
    xi = sys.xi(cfg.eta)
    mu_v = (np.asarray(cfg.mu_v, dtype=np.float64) if cfg.mu_v is not None
            else sys.default_mu_v(cfg.eta))
    if mu_v.shape != (k + 1,):
        raise ShapeError(f"mu_v must have {k + 1} entries")
    if cfg.enforce_assumption1:
        mu_v = _assumption1_projection(sys, xi, mu_v)
    cov_v = xi - np.outer(mu_v, mu_v)
    family = cfg.noise_family
    eta_bits = int(np.float64(cfg.eta).view(np.int64))
    rng = np.random.default_rng(
        [cfg.seed, 2, seed, FAMILIES.index(family), eta_bits & 0xFFFFFFFF]
    )

    eps_factor = _psd_factor(sys.eps_cov, "eps_cov")
    eps = rng.standard_normal((n, k + 1)) @ eps_factor.T
    nu_used: float | None = None

    if family in ("gaussian", "student_t"):
        v_factor = _psd_factor(cov_v, f"Xi_eta - mu_v mu_v^T (eta={cfg.eta})")
        v = mu_v + rng.standard_normal((n, k + 1)) @ v_factor.T
        noise = eps + v
        if family == "student_t":
            nu_used = float(cfg.nu)
            u = rng.chisquare(nu_used, size=n)
            # E[eps + v] = mu_v; recenter, stretch elliptically, restore
            noise = (noise - mu_v) * np.sqrt(nu_used / u)[:, None] + mu_v
            v = noise - eps  # audit view after the elliptical stretch
    else:  # chi2, deliberately misspecified: independent skewed coordinates
        nu_used = float(max(1, round(np.abs(mu_v).sum())))
        diag = np.diag(cov_v).copy()
        if (diag < -1e-10).any():
            raise PerturbationTooStrongError(
                f"negative variance in Xi_eta - mu_v mu_v^T: eigenvalue "
                f"{diag.min():.6e}"
            )
        np.clip(diag, 0.0, None, out=diag)
        raw = rng.chisquare(nu_used, size=(n, k + 1))
        v = (raw - nu_used) / np.sqrt(2.0 * nu_used) * np.sqrt(diag) + mu_v
        noise = eps + v

    ZY = _forward_substitute(sys.B, noise)
    Z = ZY[:, :k]
    return TestEnvData(
        family=family,
        eta=float(cfg.eta),
        X=sys.decoder(Z),
        Y=ZY[:, k],
        Z_true=Z,
        mu_v=mu_v,
        cov_v=cov_v,
        v=v,
        noise=noise,
        nu=nu_used,
    )
