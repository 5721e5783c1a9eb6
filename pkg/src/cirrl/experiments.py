"""Experiment orchestration: train/evaluate pipelines, sweeps, results CSV.

Result rows use the fixed schema ``run_id,seed,method,gamma,eta,family,
metric,value``.  Fields that do not apply to a metric (eta for a training
MSE, gamma for a baseline fit) are left empty.  Rows are canonicalized by
sorting before writing, so reruns of a deterministic pipeline produce
byte-identical files regardless of completion order.

Failed sweep cells never abort the run: the cell's rows are emitted with
``value=nan`` and the exception is appended to an ``errors.log`` sidecar
next to the results CSV.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import predict_baseline, train_erm, train_irm
from .config import (
    ExperimentConfig, baseline_for_seed, gen_for_seed, repr_for_seed,
)
from .data_io import dataset_manifest, load_csv_dataset, save_dataset, save_manifest
from .drig import center, drig_closed_form, predict_latents
from .errors import ConfigError
from .nn import dumps_json, mlp_from_dict, mlp_to_dict
from .repr_train import (
    encode, latent_dim_sweep, load_checkpoint, save_checkpoint,
    train_representation,
)
from .scm import MultiEnvDataset, ScmSystem, generate_test, generate_train

RESULT_COLUMNS = ("run_id", "seed", "method", "gamma", "eta", "family",
                  "metric", "value")
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    seed: int
    method: str
    gamma: float | None
    eta: float | None
    family: str
    metric: str
    value: float


def _cell(x: float | None) -> str:
    return "" if x is None else FLOAT_FMT % x


def rows_to_csv(rows: list[ResultRow]) -> str:
    """Canonical rendering: header plus rows sorted on every column."""
    rendered = [
        (r.run_id, str(r.seed), r.method, _cell(r.gamma), _cell(r.eta),
         r.family, r.metric, FLOAT_FMT % r.value)
        for r in rows
    ]
    rendered.sort()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    writer.writerows(rendered)
    return buf.getvalue()


def worker_count() -> int:
    """Worker pool size, capped by the CIRRL_THREADS environment variable."""
    raw = os.environ.get("CIRRL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CIRRL_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"CIRRL_THREADS must be >= 1, got {n}")
    return n


def run_jobs(jobs):
    """Run thunks over the worker pool, returning results in job order."""
    n = worker_count()
    if n == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return [f.result() for f in [pool.submit(job) for job in jobs]]


# ---------------------------------------------------------------------------
# per-seed pipeline pieces


def dataset_for_seed(xcfg: ExperimentConfig, seed: int):
    """Return (system, dataset); the system is None for external CSV data."""
    if xcfg.csv_path is not None:
        return None, load_csv_dataset(xcfg.csv_path)
    sys_, data = generate_train(gen_for_seed(xcfg, seed))
    return sys_, data


@dataclass
class TrainedSeed:
    seed: int
    repr_model: object
    erm: object | None
    irm: object | None


def train_seed(xcfg: ExperimentConfig, data: MultiEnvDataset, seed: int) -> TrainedSeed:
    repr_model = train_representation(data, repr_for_seed(xcfg, seed))
    erm = train_erm(data, baseline_for_seed(xcfg.erm, seed)) if xcfg.erm else None
    irm = train_irm(data, baseline_for_seed(xcfg.irm, seed)) if xcfg.irm else None
    return TrainedSeed(seed=seed, repr_model=repr_model, erm=erm, irm=irm)


def _mse(pred: np.ndarray, y: np.ndarray) -> float:
    d = pred - y
    return float((d * d).mean())


def make_test_envs(xcfg: ExperimentConfig, seed: int, sys_: ScmSystem | None,
                   errors: list[str]) -> dict:
    """One OOD draw per (eta, family) grid cell; failures are logged."""
    test_envs: dict = {}
    if sys_ is None:
        return test_envs
    gencfg = gen_for_seed(xcfg, seed)
    for eta in xcfg.eta_grid:
        for family in xcfg.families:
            cell_cfg = dataclasses.replace(gencfg, eta=eta, noise_family=family)
            try:
                test_envs[(eta, family)] = generate_test(sys_, cell_cfg, xcfg.n_test)
            except Exception as exc:
                errors.append(f"{xcfg.run_id},seed={seed},test,eta={eta},"
                              f"family={family}: {type(exc).__name__}: {exc}")
    return test_envs


def _method_rows(rid, seed, method, gamma, plugin_gammas, predict_env, data,
                 test_envs) -> list[ResultRow]:
    """Rows for one fitted predictor.

    ``predict_env`` maps any environment-like object (``.X``, ``.Y``, and
    ``.Z_true`` when present) to predictions.  ``gamma`` stamps the rows;
    ``plugin_gammas`` lists the radii at which the affine plug-in risk of
    this predictor is reported.
    """
    rows = []
    mses, weights = {}, {}
    total = sum(data.env(l).n for l in data.labels)
    for l in data.labels:
        env = data.env(l)
        mses[l] = _mse(predict_env(env), env.Y)
        weights[l] = env.n / total
        rows.append(ResultRow(rid, seed, method, gamma, None, "",
                              f"env_mse_{l}", mses[l]))
    train_mse = math.fsum(weights[l] * mses[l] for l in data.labels)
    rows.append(ResultRow(rid, seed, method, gamma, None, "",
                          "train_mse", train_mse))
    for pg in plugin_gammas:
        plugin = mses[0] + pg * math.fsum(
            weights[l] * (mses[l] - mses[0]) for l in data.labels)
        rows.append(ResultRow(rid, seed, method, pg, None, "",
                              "plugin_risk", plugin))
    for (eta, family), test in test_envs.items():
        rows.append(ResultRow(rid, seed, method, gamma, eta, family,
                              "ood_mse", _mse(predict_env(test), test.Y)))
    return rows


def _nan_rows(rid, seed, method, gamma, plugin_gammas, data,
              test_envs) -> list[ResultRow]:
    rows = [ResultRow(rid, seed, method, gamma, None, "", f"env_mse_{l}",
                      math.nan) for l in data.labels]
    rows.append(ResultRow(rid, seed, method, gamma, None, "", "train_mse",
                          math.nan))
    rows += [ResultRow(rid, seed, method, pg, None, "", "plugin_risk",
                       math.nan) for pg in plugin_gammas]
    rows += [ResultRow(rid, seed, method, gamma, eta, family, "ood_mse",
                       math.nan) for (eta, family) in test_envs]
    return rows


def evaluate_seed(xcfg: ExperimentConfig, seed: int, sys_: ScmSystem | None,
                  data: MultiEnvDataset, trained: TrainedSeed,
                  errors: list[str]) -> list[ResultRow]:
    """All result rows for one trained seed; cell failures become NaN rows."""
    rid = xcfg.run_id
    rows: list[ResultRow] = []
    test_envs = make_test_envs(xcfg, seed, sys_, errors)

    model = trained.repr_model
    rows.append(ResultRow(rid, seed, "cirrl", None, None, "",
                          "loss_rl_final", model.final_loss))

    # linear robust fits: encoded latents, and true latents when present
    latents = {l: encode(model, data.env(l).X) for l in data.labels}
    sources = [("cirrl", latents, lambda env: encode(model, env.X))]
    if all(e.Z_true is not None for e in data.envs):
        sources.append(("cirrl_oracle",
                        {l: data.env(l).Z_true for l in data.labels},
                        lambda env: env.Z_true))

    ys = {l: data.env(l).Y for l in data.labels}
    for method, zs, env_to_z in sources:
        for gamma in xcfg.gamma_grid:
            try:
                centered = center(zs, ys)
                fit = drig_closed_form(centered, gamma,
                                       eq5_literal=xcfg.eq5_literal)
                def predict_env(env, _f=fit, _c=centered, _ez=env_to_z):
                    z = predict_latents(_f, _ez(env), _c.center_z)
                    return z + _c.center_y
                rows += _method_rows(rid, seed, method, gamma, [gamma],
                                     predict_env, data, test_envs)
            except Exception as exc:
                errors.append(f"{rid},seed={seed},method={method},"
                              f"gamma={gamma}: {type(exc).__name__}: {exc}")
                rows += _nan_rows(rid, seed, method, gamma, [gamma], data,
                                  test_envs)

    for method, net in (("erm", trained.erm), ("irm", trained.irm)):
        if net is None:
            continue
        try:
            rows += _method_rows(
                rid, seed, method, None, xcfg.gamma_grid,
                lambda env, _n=net: predict_baseline(_n, env.X),
                data, test_envs)
        except Exception as exc:
            errors.append(f"{rid},seed={seed},method={method}: "
                          f"{type(exc).__name__}: {exc}")
            rows += _nan_rows(rid, seed, method, None, xcfg.gamma_grid,
                              data, test_envs)
    return rows


# ---------------------------------------------------------------------------
# top-level commands


def _checkpoint_paths(xcfg: ExperimentConfig, seed: int) -> dict:
    out = xcfg.out_dir
    return {
        "repr": os.path.join(out, f"repr_s{seed}.json"),
        "erm": os.path.join(out, f"erm_s{seed}.json"),
        "irm": os.path.join(out, f"irm_s{seed}.json"),
    }


def cmd_generate(xcfg: ExperimentConfig) -> list[str]:
    """Write one dataset CSV + manifest per seed; returns written paths."""
    if xcfg.generation is None:
        raise ConfigError("generate needs a synthetic generation section")
    os.makedirs(xcfg.out_dir, exist_ok=True)
    written = []
    for seed in xcfg.seeds:
        gencfg = gen_for_seed(xcfg, seed)
        sys_, data = generate_train(gencfg)
        csv_path = os.path.join(xcfg.out_dir, f"dataset_s{seed}.csv")
        man_path = os.path.join(xcfg.out_dir, f"manifest_s{seed}.json")
        save_dataset(data, csv_path)
        save_manifest(dataset_manifest(sys_, gencfg), man_path)
        written += [csv_path, man_path]
    return written


def cmd_train(xcfg: ExperimentConfig) -> dict[int, TrainedSeed]:
    """Train representation + baselines per seed; write checkpoints."""
    os.makedirs(xcfg.out_dir, exist_ok=True)

    def one(seed):
        _, data = dataset_for_seed(xcfg, seed)
        trained = train_seed(xcfg, data, seed)
        paths = _checkpoint_paths(xcfg, seed)
        save_checkpoint(trained.repr_model, paths["repr"])
        for name, net in (("erm", trained.erm), ("irm", trained.irm)):
            if net is not None:
                with open(paths[name], "w", encoding="utf-8") as fh:
                    fh.write(dumps_json(mlp_to_dict(net)))
                    fh.write("\n")
        return seed, trained

    return dict(run_jobs([lambda s=s: one(s) for s in xcfg.seeds]))


def cmd_evaluate(xcfg: ExperimentConfig,
                 trained: dict[int, TrainedSeed] | None = None) -> str:
    """Evaluate all seeds; writes results.csv (+ errors.log if any cells
    failed) and returns the results path."""
    os.makedirs(xcfg.out_dir, exist_ok=True)
    errors: list[str] = []

    def one(seed):
        sys_, data = dataset_for_seed(xcfg, seed)
        t = (trained or {}).get(seed)
        if t is None:
            t = _load_trained(xcfg, seed)
            if t is None:
                t = train_seed(xcfg, data, seed)
        return evaluate_seed(xcfg, seed, sys_, data, t, errors)

    all_rows: list[ResultRow] = []
    for chunk in run_jobs([lambda s=s: one(s) for s in xcfg.seeds]):
        all_rows += chunk
    results_path = os.path.join(xcfg.out_dir, "results.csv")
    with open(results_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(all_rows))
    if errors:
        with open(os.path.join(xcfg.out_dir, "errors.log"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(sorted(errors)) + "\n")
    return results_path


def _load_trained(xcfg: ExperimentConfig, seed: int) -> TrainedSeed | None:
    """Reload checkpoints written by cmd_train, if all expected ones exist."""
    paths = _checkpoint_paths(xcfg, seed)
    if not os.path.exists(paths["repr"]):
        return None
    repr_model = load_checkpoint(paths["repr"])
    nets = {}
    for name in ("erm", "irm"):
        want = (xcfg.erm if name == "erm" else xcfg.irm) is not None
        if not want:
            nets[name] = None
            continue
        if not os.path.exists(paths[name]):
            return None
        with open(paths[name], "r", encoding="utf-8") as fh:
            nets[name] = mlp_from_dict(json.load(fh))
    return TrainedSeed(seed=seed, repr_model=repr_model, erm=nets["erm"],
                       irm=nets["irm"])


def cmd_elbow(xcfg: ExperimentConfig, dims: list[int]) -> str:
    """Latent-dimension sweep per seed; writes elbow.csv and returns it."""
    os.makedirs(xcfg.out_dir, exist_ok=True)

    def one(seed):
        _, data = dataset_for_seed(xcfg, seed)
        return seed, latent_dim_sweep(data, repr_for_seed(xcfg, seed), dims)

    out_rows = []
    for seed, table in run_jobs([lambda s=s: one(s) for s in xcfg.seeds]):
        for rec in table:
            out_rows.append((xcfg.run_id, str(seed), str(rec["dim"]),
                             FLOAT_FMT % rec["final_loss"], rec["error"] or ""))
    out_rows.sort(key=lambda r: (r[0], int(r[1]), int(r[2])))
    path = os.path.join(xcfg.out_dir, "elbow.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("run_id", "seed", "dim", "final_loss", "error"))
        writer.writerows(out_rows)
    return path


def cmd_sweep(xcfg: ExperimentConfig) -> str:
    """Composite pipeline: generate (when synthetic), train, evaluate."""
    if xcfg.generation is not None:
        cmd_generate(xcfg)
    trained = cmd_train(xcfg)
    return cmd_evaluate(xcfg, trained)
