"""Dataset CSV and manifest serialization.

One CSV per run with header ``env,y,x1..xd[,z1..zk]`` — UTF-8, comma
separated, '.' decimals, newline terminated.  Floats are written with 17
significant digits so a save/load round trip reproduces every float64
bit-exactly.  The companion JSON manifest records the generating config,
graph, intervention moments, the perturbation second moment at the
configured strength, and the documented formatting conventions.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict

import numpy as np

from .errors import ContractError, DataError, SchemaError
from .nn import dumps_json
from .scm import EnvData, GenConfig, MultiEnvDataset, ScmSystem

FLOAT_FMT = "%.17g"


def _header(d: int, k: int | None) -> list[str]:
    cols = ["env", "y"] + [f"x{i}" for i in range(1, d + 1)]
    if k:
        cols += [f"z{i}" for i in range(1, k + 1)]
    return cols


def dataset_to_csv(data: MultiEnvDataset) -> str:
    """Render the dataset; z-columns appear iff every env carries them."""
    with_z = all(e.Z_true is not None for e in data.envs)
    k = data.envs[0].Z_true.shape[1] if with_z else None
    if with_z and len({e.Z_true.shape[1] for e in data.envs}) != 1:
        raise DataError("environments disagree on the latent dimension")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_header(data.d, k))
    for env in data.envs:
        for i in range(env.n):
            row = [env.label, FLOAT_FMT % env.Y[i]]
            row += [FLOAT_FMT % v for v in env.X[i]]
            if with_z:
                row += [FLOAT_FMT % v for v in env.Z_true[i]]
            writer.writerow(row)
    return buf.getvalue()


def save_dataset(data: MultiEnvDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(data))


def _parse_header(cols: list[str]) -> tuple[int, int]:
    """Return (d, k) or raise; k = 0 means no latent columns."""
    if cols[:2] != ["env", "y"]:
        raise SchemaError(
            f"header must start with 'env,y', got {','.join(cols[:2]) or '(empty)'}")
    d = 0
    pos = 2
    while pos < len(cols) and cols[pos] == f"x{d + 1}":
        d += 1
        pos += 1
    if d == 0:
        raise SchemaError("header needs at least one x-column (x1..xd)")
    k = 0
    while pos < len(cols) and cols[pos] == f"z{k + 1}":
        k += 1
        pos += 1
    if pos != len(cols):
        raise SchemaError(
            f"unexpected header column {cols[pos]!r} at position {pos + 1}; "
            "expected env,y,x1..xd[,z1..zk]")
    return d, k


def load_csv_dataset(path) -> MultiEnvDataset:
    """Parse a dataset CSV; rows are grouped by env in first-seen order.

    Environment labels that look like integers are stored as ints.  A
    reference environment labeled 0 is required.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row is mandatory")
        d, k = _parse_header([c.strip() for c in header])
        width = 2 + d + k
        by_env: dict = {}
        order: list = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}: line {lineno}: expected {width} cells, got {len(row)}")
            label = row[0].strip()
            label = int(label) if label.lstrip("+-").isdigit() else label
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: non-numeric cell ({exc})")
            if label not in by_env:
                by_env[label] = []
                order.append(label)
            by_env[label].append(vals)
    if not order:
        raise DataError(f"{path}: no data rows")
    if 0 not in by_env:
        raise ContractError(
            f"{path}: reference environment 0 is required, found {order}")
    envs = []
    for label in order:
        block = np.asarray(by_env[label], dtype=np.float64)
        envs.append(EnvData(
            label=label,
            Y=block[:, 0],
            X=block[:, 1:1 + d],
            Z_true=block[:, 1 + d:] if k else None,
        ))
    return MultiEnvDataset(envs)


def dataset_manifest(sys: ScmSystem, cfg: GenConfig) -> dict:
    """Everything needed to audit a generated dataset."""
    mu_v = (np.asarray(cfg.mu_v, dtype=np.float64) if cfg.mu_v is not None
            else sys.default_mu_v(cfg.eta))
    return {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "B": sys.B,
        "eps_cov": sys.eps_cov,
        "interventions": [
            {"mu": iv.mu, "sigma": iv.sigma} for iv in sys.interventions
        ],
        "xi_eta": sys.xi(cfg.eta),
        "mu_v": mu_v,
        "conventions": {
            "intervention_covariance_norm": "spectral",
            "chi2_nu_rule": "max(1, round(one-norm of the mean perturbation))",
        },
    }


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(manifest))
        fh.write("\n")
