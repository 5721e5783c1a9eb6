"""Experiment configuration: a single TOML document with flat sections.

Sections: ``[run]`` (id, out, seeds), ``[generation]`` (synthetic
generator fields, or ``csv = "path"`` for an external dataset),
``[representation]``, ``[drig]`` (gamma grid, literal-moment flag),
``[baselines.erm]`` / ``[baselines.irm]`` (optional; architecture
defaults mirror the representation section so all networks come from
one config), and ``[evaluation]`` (eta grid, noise families, n_test).

Unknown keys are rejected; every knob either appears here or does not
exist.  The per-seed helpers stamp one run seed into every sub-config
so a single integer reproduces the whole pipeline.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import BaselineConfig
from .errors import ConfigError, SchemaError
from .repr_train import ReprTrainConfig
from .scm import FAMILIES, GenConfig


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str
    out_dir: str
    seeds: tuple[int, ...]
    generation: GenConfig | None        # exactly one of generation/csv_path
    csv_path: str | None
    representation: ReprTrainConfig
    erm: BaselineConfig | None
    irm: BaselineConfig | None
    gamma_grid: tuple[float, ...]
    eq5_literal: bool = False
    eta_grid: tuple[float, ...] = (0.0,)
    families: tuple[str, ...] = ("gaussian",)
    n_test: int = 2000

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if (self.generation is None) == (self.csv_path is None):
            raise ConfigError(
                "exactly one of a synthetic generation section and csv is required")
        if not self.gamma_grid or any(g < 0 for g in self.gamma_grid):
            raise ConfigError(f"gamma grid must be nonempty and >= 0: {self.gamma_grid}")
        if any(e < 0 for e in self.eta_grid):
            raise ConfigError(f"eta grid must be >= 0: {self.eta_grid}")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown noise family {fam!r}, know {FAMILIES}")
        if self.n_test < 2:
            raise ConfigError(f"n_test must be >= 2, got {self.n_test}")


def _take(section: dict, name: str, allowed: set) -> dict:
    extra = set(section) - allowed
    if extra:
        raise SchemaError(f"unknown key(s) in [{name}]: {sorted(extra)}")
    return dict(section)


_GEN_KEYS = {f.name for f in dataclasses.fields(GenConfig)}
_REPR_KEYS = {f.name for f in dataclasses.fields(ReprTrainConfig)}
_BASE_KEYS = {f.name for f in dataclasses.fields(BaselineConfig)} - {"kind"}


def _baseline(section: dict, kind: str, repr_cfg: ReprTrainConfig) -> BaselineConfig:
    kwargs = _take(section, f"baselines.{kind}", _BASE_KEYS)
    kwargs.setdefault("width", repr_cfg.width)
    kwargs.setdefault("depth", repr_cfg.depth)
    return BaselineConfig(kind=kind, **kwargs)


def parse_config(doc: dict, default_run_id: str = "run") -> ExperimentConfig:
    known = {"run", "generation", "representation", "drig", "baselines", "evaluation"}
    extra = set(doc) - known
    if extra:
        raise SchemaError(f"unknown section(s): {sorted(extra)}")

    run = _take(doc.get("run", {}), "run", {"id", "out", "seeds"})
    gen_sec = dict(doc.get("generation", {}))
    csv_path = gen_sec.pop("csv", None)
    if csv_path is not None and gen_sec:
        raise SchemaError(
            f"[generation] mixes csv with synthetic keys: {sorted(gen_sec)}")
    generation = None
    if csv_path is None:
        kwargs = _take(gen_sec, "generation", _GEN_KEYS)
        if "mu_v" in kwargs:
            kwargs["mu_v"] = tuple(kwargs["mu_v"])
        generation = GenConfig(**kwargs)

    repr_cfg = ReprTrainConfig(
        **_take(doc.get("representation", {}), "representation", _REPR_KEYS))

    drig = _take(doc.get("drig", {}), "drig", {"gamma", "eq5_literal"})
    baselines = doc.get("baselines", {})
    extra = set(baselines) - {"erm", "irm"}
    if extra:
        raise SchemaError(f"unknown baseline(s): {sorted(extra)}")
    evaluation = _take(doc.get("evaluation", {}), "evaluation",
                       {"eta", "families", "n_test"})

    return ExperimentConfig(
        run_id=str(run.get("id", default_run_id)),
        out_dir=str(run.get("out", "out")),
        seeds=tuple(int(s) for s in run.get("seeds", [0])),
        generation=generation,
        csv_path=csv_path,
        representation=repr_cfg,
        erm=_baseline(baselines["erm"], "erm", repr_cfg) if "erm" in baselines else None,
        irm=_baseline(baselines["irm"], "irm", repr_cfg) if "irm" in baselines else None,
        gamma_grid=tuple(float(g) for g in drig.get("gamma", [0.0])),
        eq5_literal=bool(drig.get("eq5_literal", False)),
        eta_grid=tuple(float(e) for e in evaluation.get("eta", [0.0])),
        families=tuple(evaluation.get("families", ["gaussian"])),
        n_test=int(evaluation.get("n_test", 2000)),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: not valid TOML: {exc}")
    stem = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_config(doc, default_run_id=stem)


def gen_for_seed(xcfg: ExperimentConfig, seed: int) -> GenConfig:
    return dataclasses.replace(xcfg.generation, seed=seed)


def repr_for_seed(xcfg: ExperimentConfig, seed: int) -> ReprTrainConfig:
    return dataclasses.replace(xcfg.representation, seed=seed)


def baseline_for_seed(cfg: BaselineConfig, seed: int) -> BaselineConfig:
    return dataclasses.replace(cfg, seed=seed)


def apply_overrides(xcfg: ExperimentConfig, *, seed: int | None = None,
                    out: str | None = None, gamma: list | None = None,
                    eta: list | None = None, eq5_literal: bool = False,
                    enforce_assumption1: bool = False) -> ExperimentConfig:
    """Fold command-line flags into a loaded config."""
    changes: dict = {}
    if seed is not None:
        changes["seeds"] = (int(seed),)
    if out is not None:
        changes["out_dir"] = str(out)
    if gamma is not None:
        changes["gamma_grid"] = tuple(float(g) for g in gamma)
    if eta is not None:
        changes["eta_grid"] = tuple(float(e) for e in eta)
    if eq5_literal:
        changes["eq5_literal"] = True
    if enforce_assumption1:
        if xcfg.generation is None:
            raise ConfigError("--enforce-assumption1 needs a synthetic generation section")
        changes["generation"] = dataclasses.replace(
            xcfg.generation, enforce_assumption1=True)
    return dataclasses.replace(xcfg, **changes) if changes else xcfg
