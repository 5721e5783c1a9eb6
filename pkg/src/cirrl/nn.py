"""Dense float64 MLP with hand-written reverse-mode gradients.

The networks used here are small, fully connected and CPU-bound, so the
whole engine is plain numpy: affine layers, ReLU on hidden layers and
identity on the last, optional batch norm per hidden layer, optional
inverted dropout, and Adam.  Gradients are coded by hand and checked
against central finite differences in the test-suite; there is no
autograd framework anywhere in the package.

Conventions
-----------
* A batch is a (n, features) float64 array, one row per sample.
* Weights are stored (fan_in, fan_out) so a layer computes ``x @ W + b``.
* Hidden layer order is affine -> batch norm -> ReLU -> dropout.
* ``train`` mode uses batch statistics and live dropout; ``eval`` mode
  uses running statistics and no dropout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of one MLP.

    layer_widths lists every width including input and output, so a
    config with L entries has L - 1 affine layers and L - 2 hidden
    layers.  ``batch_norm`` is either one flag for all hidden layers or
    one flag per hidden layer.
    """

    layer_widths: tuple[int, ...]
    batch_norm: tuple[bool, ...] = ()
    dropout_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ConfigError(f"need at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"all layer widths must be >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)
        n_hidden = len(widths) - 2
        bn = self.batch_norm
        if isinstance(bn, bool):
            bn = (bn,) * n_hidden
        bn = tuple(bool(f) for f in bn)
        if len(bn) == 0:
            bn = (False,) * n_hidden
        if len(bn) != n_hidden:
            raise ConfigError(
                f"batch_norm has {len(bn)} flags for {n_hidden} hidden layers"
            )
        object.__setattr__(self, "batch_norm", bn)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


class Mlp:
    """Parameters plus a train/eval mode switch."""

    def __init__(self, config: MlpConfig, Ws, bs, bn, mode: str = "train"):
        self.config = config
        self.Ws: list[np.ndarray] = Ws
        self.bs: list[np.ndarray] = bs
        self.bn: list[BnParams | None] = bn  # one entry per hidden layer
        self.mode = mode

    @property
    def mode(self) -> str:
        return self._mode

    @mode.setter
    def mode(self, value: str):
        if value not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {value!r}")
        self._mode = value

    def param_arrays(self) -> list[np.ndarray]:
        """Trainable parameters in a fixed order (weights, biases, then
        batch-norm scale/shift per hidden layer).  Running statistics
        are state, not parameters."""
        out: list[np.ndarray] = []
        for W, b in zip(self.Ws, self.bs):
            out.append(W)
            out.append(b)
        for p in self.bn:
            if p is not None:
                out.append(p.gamma)
                out.append(p.beta)
        return out


@dataclass
class MlpGrads:
    dWs: list[np.ndarray]
    dbs: list[np.ndarray]
    dgammas: list[np.ndarray | None]
    dbetas: list[np.ndarray | None]

    def grad_arrays(self) -> list[np.ndarray]:
        """Same order as Mlp.param_arrays."""
        out: list[np.ndarray] = []
        for dW, db in zip(self.dWs, self.dbs):
            out.append(dW)
            out.append(db)
        for dg, dbeta in zip(self.dgammas, self.dbetas):
            if dg is not None:
                out.append(dg)
                out.append(dbeta)
        return out

    def add_(self, other: "MlpGrads") -> "MlpGrads":
        for a, b in zip(self.grad_arrays(), other.grad_arrays()):
            a += b
        return self

    def scale_(self, c: float) -> "MlpGrads":
        for a in self.grad_arrays():
            a *= c
        return self


def zero_grads(net: Mlp) -> MlpGrads:
    dWs = [np.zeros_like(W) for W in net.Ws]
    dbs = [np.zeros_like(b) for b in net.bs]
    dgs = [None if p is None else np.zeros_like(p.gamma) for p in net.bn]
    dbe = [None if p is None else np.zeros_like(p.beta) for p in net.bn]
    return MlpGrads(dWs, dbs, dgs, dbe)


def param_count(net: Mlp) -> int:
    return sum(int(a.size) for a in net.param_arrays())


def mlp_init(config: MlpConfig) -> Mlp:
    """He-initialised network: W ~ N(0, 2 / fan_in), biases zero,
    batch-norm scale one / shift zero, running stats (0, 1)."""
    rng = np.random.default_rng(config.seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(config.layer_widths[:-1], config.layer_widths[1:]):
        scale = np.sqrt(2.0 / fan_in)
        Ws.append(rng.standard_normal((fan_in, fan_out)) * scale)
        bs.append(np.zeros(fan_out))
    bn: list[BnParams | None] = []
    for i, flag in enumerate(config.batch_norm):
        if flag:
            w = config.layer_widths[i + 1]
            bn.append(BnParams(np.ones(w), np.zeros(w), np.zeros(w), np.ones(w)))
        else:
            bn.append(None)
    return Mlp(config, Ws, bs, bn)


# ---------------------------------------------------------------------------
# forward / backward


def mlp_forward(net: Mlp, X, rng: np.random.Generator | None = None):
    """Run the net on a batch.

    Returns (output, cache); pass the cache to mlp_backward.  In train
    mode batch norm uses batch statistics and updates the running ones,
    and dropout needs ``rng``.  In eval mode the pass is deterministic.
    """
    X = _as_f64(X)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-d batch, got shape {X.shape}")
    if X.shape[1] != net.config.in_dim:
        raise ShapeError(
            f"batch has {X.shape[1]} features, net expects {net.config.in_dim}"
        )
    if not np.isfinite(X).all():
        raise NumericError("non-finite values in forward input")
    train = net.mode == "train"
    p = net.config.dropout_p
    if train and p > 0.0 and rng is None:
        raise ConfigError("dropout in train mode needs an rng")

    h = X
    cache = []
    n_layers = net.config.n_layers
    for i in range(n_layers):
        x_in = h
        a = x_in @ net.Ws[i] + net.bs[i]
        layer = {"x": x_in}
        if i == n_layers - 1:  # last layer: identity activation
            h = a
            cache.append(layer)
            continue
        bn = net.bn[i]
        if bn is not None:
            if train:
                if a.shape[0] < 2:
                    raise ShapeError("batch norm in train mode needs >= 2 rows")
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                invstd = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (a - mu) * invstd
                bn.running_mean *= BN_MOMENTUM
                bn.running_mean += (1.0 - BN_MOMENTUM) * mu
                bn.running_var *= BN_MOMENTUM
                bn.running_var += (1.0 - BN_MOMENTUM) * var
                layer["bn_train"] = True
            else:
                invstd = 1.0 / np.sqrt(bn.running_var + BN_EPS)
                xhat = (a - bn.running_mean) * invstd
                layer["bn_train"] = False
            h = bn.gamma * xhat + bn.beta
            layer["xhat"] = xhat
            layer["invstd"] = invstd
        else:
            h = a
        mask = h > 0.0
        h = np.where(mask, h, 0.0)
        layer["relu_mask"] = mask
        if train and p > 0.0:
            drop = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * drop
            layer["drop_mask"] = drop
        cache.append(layer)
    return h, cache


def mlp_backward(net: Mlp, cache, dY):
    """Exact reverse-mode gradients for the loss whose output gradient is
    dY.  Returns (MlpGrads, gradient w.r.t. the input batch)."""
    dY = _as_f64(dY)
    grads = zero_grads(net)
    n_layers = net.config.n_layers
    if len(cache) != n_layers:
        raise ShapeError(f"cache has {len(cache)} layers, net has {n_layers}")
    d = dY
    for i in range(n_layers - 1, -1, -1):
        layer = cache[i]
        if i < n_layers - 1:
            if "drop_mask" in layer:
                d = d * layer["drop_mask"]
            d = d * layer["relu_mask"]
            bn = net.bn[i]
            if bn is not None:
                xhat = layer["xhat"]
                invstd = layer["invstd"]
                grads.dgammas[i][...] = (d * xhat).sum(axis=0)
                grads.dbetas[i][...] = d.sum(axis=0)
                dxhat = d * bn.gamma
                if layer["bn_train"]:
                    n = xhat.shape[0]
                    d = (invstd / n) * (
                        n * dxhat
                        - dxhat.sum(axis=0)
                        - xhat * (dxhat * xhat).sum(axis=0)
                    )
                else:
                    d = dxhat * invstd
        x_in = layer["x"]
        grads.dWs[i][...] = x_in.T @ d
        grads.dbs[i][...] = d.sum(axis=0)
        d = d @ net.Ws[i].T
    return grads, d


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(net: Mlp, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    params = net.param_arrays()
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(net: Mlp, grads: MlpGrads, state: AdamState) -> None:
    """One Adam update, in place, with standard bias correction."""
    params = net.param_arrays()
    gs = grads.grad_arrays()
    if len(params) != len(state.m) or len(params) != len(gs):
        raise ShapeError("optimizer state does not match the network")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# serialization

# Checkpoints print every float with 17 significant digits, which is
# enough for a bit-exact float64 round trip through decimal text.


def _format_value(x) -> str:
    if isinstance(x, bool) or isinstance(x, np.bool_):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not np.isfinite(x):
            raise NumericError("cannot serialize non-finite float")
        return f"{x:.17g}"
    if isinstance(x, str):
        import json

        return json.dumps(x)
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in x) + "]"
    if isinstance(x, dict):
        items = (f"{_format_value(str(k))}: {_format_value(v)}" for k, v in x.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps_json(obj) -> str:
    """JSON text with deterministic 17-significant-digit floats."""
    return _format_value(obj)


def mlp_to_dict(net: Mlp) -> dict:
    d = {
        "config": {
            "layer_widths": list(net.config.layer_widths),
            "batch_norm": list(net.config.batch_norm),
            "dropout_p": net.config.dropout_p,
            "seed": net.config.seed,
        },
        "mode": net.mode,
        "layers": [{"W": W, "b": b} for W, b in zip(net.Ws, net.bs)],
        "batch_norm": [
            None
            if p is None
            else {
                "gamma": p.gamma,
                "beta": p.beta,
                "running_mean": p.running_mean,
                "running_var": p.running_var,
            }
            for p in net.bn
        ],
    }
    return d


def mlp_from_dict(d: dict) -> Mlp:
    cfg = d["config"]
    config = MlpConfig(
        layer_widths=tuple(cfg["layer_widths"]),
        batch_norm=tuple(cfg["batch_norm"]),
        dropout_p=float(cfg["dropout_p"]),
        seed=int(cfg["seed"]),
    )
    Ws, bs = [], []
    for i, layer in enumerate(d["layers"]):
        W = _as_f64(layer["W"])
        b = _as_f64(layer["b"])
        want = (config.layer_widths[i], config.layer_widths[i + 1])
        if W.shape != want or b.shape != (want[1],):
            raise ShapeError(f"layer {i} arrays do not match config widths {want}")
        Ws.append(W)
        bs.append(b)
    bn: list[BnParams | None] = []
    for p in d["batch_norm"]:
        if p is None:
            bn.append(None)
        else:
            bn.append(
                BnParams(
                    _as_f64(p["gamma"]),
                    _as_f64(p["beta"]),
                    _as_f64(p["running_mean"]),
                    _as_f64(p["running_var"]),
                )
            )
    net = Mlp(config, Ws, bs, bn, mode=str(d.get("mode", "eval")))
    for a in net.param_arrays():
        if not np.isfinite(a).all():
            raise NumericError("non-finite parameter in checkpoint")
    return net
