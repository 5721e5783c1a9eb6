"""Tests for dataset I/O, experiment config, orchestration, and the CLI."""
import csv
import json
import math
import os

import numpy as np
import pytest

from cirrl.cli import main
from cirrl.config import apply_overrides, load_config, parse_config
from cirrl.data_io import (
    dataset_manifest, dataset_to_csv, load_csv_dataset, save_dataset,
    save_manifest,
)
from cirrl.errors import ConfigError, ContractError, DataError, SchemaError
from cirrl.experiments import (
    ResultRow, cmd_elbow, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train,
    evaluate_seed, rows_to_csv, train_seed, worker_count,
)
from cirrl.scm import EnvData, GenConfig, MultiEnvDataset, generate_train

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

TINY_TOML = """
[run]
id = "tiny"
out = "{out}"
seeds = [0]

[generation]
k = 2
d = 4
num_envs = 3
n_per_env = 120
decoder = "polynomial"
decoder_degree = 2
eta = 2.0
mu_v = [0.0, 0.0, 0.0]

[representation]
latent_dim = 2
width = 8
depth = 1
alpha = 0.5
lr = 1e-3
epochs = 2
batch_size = 64

[drig]
gamma = [0.0, 1.0]

[baselines.erm]
dropout_p = 0.0
lr = 1e-3
epochs = 2
batch_size = 64

[baselines.irm]
dropout_p = 0.0
irm_lambda = 10.0
lr = 1e-3
epochs = 2
batch_size = 64

[evaluation]
eta = [0.0]
families = ["gaussian"]
n_test = 64
"""


def tiny_config(tmp_path, name="tiny.toml", **edits):
    out = str(tmp_path / "out")
    text = TINY_TOML.format(out=out.replace("\\", "/"))
    for old, new in edits.items():
        assert old in text
        text = text.replace(old, new)
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestDatasetIo:
    def test_round_trip_with_latents(self, tmp_path):
        _, data = generate_train(GenConfig(k=2, d=4, num_envs=3, n_per_env=50,
                                           decoder_degree=2, seed=3))
        path = tmp_path / "data.csv"
        save_dataset(data, path)
        back = load_csv_dataset(path)
        assert back.labels == data.labels
        for l in data.labels:
            assert np.array_equal(back.env(l).X, data.env(l).X)
            assert np.array_equal(back.env(l).Y, data.env(l).Y)
            assert np.array_equal(back.env(l).Z_true, data.env(l).Z_true)

    def test_round_trip_without_latents(self, tmp_path):
        rng = np.random.default_rng(0)
        data = MultiEnvDataset(envs=[
            EnvData(label=l, X=rng.normal(size=(20, 3)), Y=rng.normal(size=20))
            for l in (0, 1)
        ])
        path = tmp_path / "noz.csv"
        save_dataset(data, path)
        header = path.read_text().splitlines()[0]
        assert header == "env,y,x1,x2,x3"
        back = load_csv_dataset(path)
        assert back.env(1).Z_true is None
        assert np.array_equal(back.env(0).X, data.env(0).X)

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        lines = ["env,y,x1", "0,1.0,2.0", "0,1.0,3.0", "1,oops,4.0"]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="line 4"):
            load_csv_dataset(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("env,y,x1\n0,1.0,2.0\n0,1.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv_dataset(path)

    def test_header_must_match_schema(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("env,y,x1,x3\n0,1,2,3\n")
        with pytest.raises(SchemaError, match="x3"):
            load_csv_dataset(path)
        path.write_text("y,env,x1\n")
        with pytest.raises(SchemaError, match="env,y"):
            load_csv_dataset(path)
        path.write_text("")
        with pytest.raises(SchemaError, match="header"):
            load_csv_dataset(path)

    def test_missing_reference_env(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("env,y,x1\n1,1.0,2.0\n2,0.5,1.5\n")
        with pytest.raises(ContractError, match="environment 0"):
            load_csv_dataset(path)

    def test_manifest_contents(self, tmp_path):
        cfg = GenConfig(k=2, d=4, num_envs=3, n_per_env=50, eta=0.0, seed=1)
        sys_, _ = generate_train(cfg)
        man = dataset_manifest(sys_, cfg)
        path = tmp_path / "m.json"
        save_manifest(man, path)
        loaded = json.loads(path.read_text())
        assert loaded["seed"] == 1
        assert len(loaded["interventions"]) == 3
        assert np.allclose(np.asarray(loaded["xi_eta"]), 0.0)  # eta = 0
        assert loaded["conventions"]["intervention_covariance_norm"] == "spectral"

    def test_csv_text_is_deterministic(self):
        _, a = generate_train(GenConfig(k=2, d=4, num_envs=2, n_per_env=30, seed=9))
        _, b = generate_train(GenConfig(k=2, d=4, num_envs=2, n_per_env=30, seed=9))
        assert dataset_to_csv(a) == dataset_to_csv(b)


class TestConfigFile:
    def test_reference_config_parses(self):
        xcfg = load_config(os.path.join(REPO, "configs", "reference.toml"))
        assert xcfg.run_id == "reference"
        assert xcfg.generation.n_per_env == 2000
        assert xcfg.generation.num_envs == 5
        assert xcfg.representation.width == 400
        assert xcfg.representation.lr == 1e-4
        assert xcfg.representation.alpha == 0.1
        assert xcfg.erm.dropout_p == 0.25
        assert xcfg.irm.irm_lambda == 100.0
        assert xcfg.gamma_grid == (0.0, 1.0, 5.0, 10.0)
        assert xcfg.families == ("gaussian", "student_t", "chi2")

    def test_unknown_key_rejected(self, tmp_path):
        path = tiny_config(tmp_path, edits=None) if False else tiny_config(tmp_path)
        text = path.read_text().replace("alpha = 0.5", "alpha = 0.5\nlearning = 3")
        path.write_text(text)
        with pytest.raises(SchemaError, match="learning"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tiny_config(tmp_path)
        path.write_text(path.read_text() + "\n[extra]\nx = 1\n")
        with pytest.raises(SchemaError, match="extra"):
            load_config(path)

    def test_csv_and_synthetic_exclusive(self):
        with pytest.raises(SchemaError, match="csv"):
            parse_config({"generation": {"csv": "a.csv", "k": 2},
                          "representation": {"latent_dim": 2}})

    def test_negative_gamma_rejected(self, tmp_path):
        path = tiny_config(tmp_path)
        path.write_text(path.read_text().replace(
            "gamma = [0.0, 1.0]", "gamma = [-1.0]"))
        with pytest.raises(ConfigError, match="gamma"):
            load_config(path)

    def test_baseline_architecture_mirrors_representation(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        assert xcfg.erm.width == xcfg.representation.width
        assert xcfg.erm.depth == xcfg.representation.depth
        assert xcfg.irm.width == xcfg.representation.width

    def test_overrides(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        out = apply_overrides(xcfg, seed=7, out="elsewhere", gamma=[2.0, 3.0],
                              eta=[1.0], eq5_literal=True,
                              enforce_assumption1=True)
        assert out.seeds == (7,)
        assert out.out_dir == "elsewhere"
        assert out.gamma_grid == (2.0, 3.0)
        assert out.eta_grid == (1.0,)
        assert out.eq5_literal is True
        assert out.generation.enforce_assumption1 is True
        # the original is untouched
        assert xcfg.seeds == (0,) and xcfg.eq5_literal is False


class TestResultRows:
    def test_canonical_sorting(self):
        rows = [
            ResultRow("r", 1, "erm", None, None, "", "train_mse", 0.5),
            ResultRow("r", 0, "cirrl", 1.0, 0.0, "gaussian", "ood_mse", 0.25),
            ResultRow("r", 0, "cirrl", 0.0, None, "", "train_mse", 1.0),
        ]
        text = rows_to_csv(rows)
        assert text == rows_to_csv(rows[::-1])
        lines = text.splitlines()
        assert lines[0] == "run_id,seed,method,gamma,eta,family,metric,value"
        assert len(lines) == 4

    def test_nan_serialized(self):
        text = rows_to_csv([ResultRow("r", 0, "cirrl", 0.0, None, "",
                                      "train_mse", math.nan)])
        assert text.splitlines()[1].endswith(",nan")

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("CIRRL_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("CIRRL_THREADS", "zero")
        with pytest.raises(ConfigError, match="CIRRL_THREADS"):
            worker_count()
        monkeypatch.setenv("CIRRL_THREADS", "0")
        with pytest.raises(ConfigError, match="CIRRL_THREADS"):
            worker_count()
        monkeypatch.delenv("CIRRL_THREADS")
        assert worker_count() == 1


class TestPipeline:
    def test_generate_writes_dataset_and_manifest(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        written = cmd_generate(xcfg)
        assert len(written) == 2
        csv_path, man_path = written
        rows = list(csv.reader(open(csv_path)))
        assert rows[0] == ["env", "y", "x1", "x2", "x3", "x4", "z1", "z2"]
        assert len(rows) == 1 + 3 * 120
        assert {r[0] for r in rows[1:]} == {"0", "1", "2"}
        man = json.loads(open(man_path).read())
        assert man["config"]["n_per_env"] == 120

    def test_sweep_row_census_and_determinism(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        results = cmd_sweep(xcfg)
        text1 = open(results, "rb").read()
        lines = text1.decode().splitlines()
        n_env, n_gamma, n_cell = 3, 2, 1  # envs, gammas, eta x family cells
        per_gamma = n_env + 1 + 1 + n_cell          # env + train + plugin + ood
        expected = (2 * n_gamma * per_gamma         # cirrl + oracle fits
                    + 1                             # loss_rl_final
                    + 2 * (n_env + 1 + n_gamma + n_cell))  # erm + irm
        assert len(lines) == 1 + expected
        for line in lines[1:]:
            assert not line.endswith(",nan")
        assert not os.path.exists(os.path.join(xcfg.out_dir, "errors.log"))
        # byte-identical rerun
        xcfg2 = apply_overrides(xcfg, out=str(tmp_path / "out2"))
        text2 = open(cmd_sweep(xcfg2), "rb").read()
        assert text1 == text2
        # datasets byte-identical too
        a = open(os.path.join(xcfg.out_dir, "dataset_s0.csv"), "rb").read()
        b = open(os.path.join(xcfg2.out_dir, "dataset_s0.csv"), "rb").read()
        assert a == b

    def test_evaluate_from_checkpoints_matches_in_memory(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        trained = cmd_train(xcfg)
        in_memory = open(cmd_evaluate(xcfg, trained), "rb").read()
        xcfg2 = apply_overrides(xcfg, out=str(tmp_path / "out"))
        # wipe nothing: reuse the checkpoints on disk, rebuild from files
        reloaded = open(cmd_evaluate(xcfg2, None), "rb").read()
        assert in_memory == reloaded

    def test_gamma_zero_equals_ols_on_latents(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        _ = cmd_sweep(xcfg)
        rows = list(csv.DictReader(open(os.path.join(xcfg.out_dir, "results.csv"))))
        got = {r["metric"]: float(r["value"]) for r in rows
               if r["method"] == "cirrl_oracle" and r["gamma"] == "0"}
        _, data = generate_train(GenConfig(k=2, d=4, num_envs=3, n_per_env=120,
                                           decoder_degree=2, eta=2.0,
                                           mu_v=(0.0, 0.0, 0.0), seed=0))
        mean_z0 = data.env(0).Z_true.mean(axis=0)
        mean_y0 = data.env(0).Y.mean()
        coef, *_ = np.linalg.lstsq(data.env(0).Z_true - mean_z0,
                                   data.env(0).Y - mean_y0, rcond=None)
        for env in data.envs:
            pred = (env.Z_true - mean_z0) @ coef + mean_y0
            mse = float(((pred - env.Y) ** 2).mean())
            assert got[f"env_mse_{env.label}"] == pytest.approx(mse, abs=1e-8)

    def test_failed_cells_marked_nan_and_logged(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        _, data = generate_train(GenConfig(k=2, d=4, num_envs=3, n_per_env=120,
                                           decoder_degree=2, eta=2.0,
                                           mu_v=(0.0, 0.0, 0.0), seed=0))
        trained = train_seed(xcfg, data, 0)
        # collapse the encoder: constant latents make every Gram singular
        enc = trained.repr_model.enc
        enc.Ws[-1][:] = 0.0
        errors = []
        rows = evaluate_seed(xcfg, 0, None, data, trained, errors)
        assert errors and "gamma" in errors[0]
        cirrl_rows = [r for r in rows if r.method == "cirrl"
                      and r.metric.startswith("env_mse")]
        assert cirrl_rows and all(math.isnan(r.value) for r in cirrl_rows)
        oracle_rows = [r for r in rows if r.method == "cirrl_oracle"]
        assert oracle_rows and all(math.isfinite(r.value) for r in oracle_rows)

    def test_oracle_ood_at_eta_zero_matches_residual_variance(self, tmp_path):
        path = tiny_config(tmp_path)
        text = path.read_text().replace("n_per_env = 120", "n_per_env = 1500")
        text = text.replace("n_test = 64", "n_test = 6000")
        path.write_text(text)
        xcfg = load_config(path)
        results = cmd_sweep(xcfg)
        rows = list(csv.DictReader(open(results)))
        ood = [float(r["value"]) for r in rows
               if r["method"] == "cirrl_oracle" and r["metric"] == "ood_mse"
               and r["gamma"] == "0" and r["eta"] == "0"]
        assert len(ood) == 1
        # independent estimate of the irreducible error of the best linear
        # predictor on the observational law: a fresh large draw from the
        # same system (eta=0 test draws follow the observational law)
        gencfg = GenConfig(k=2, d=4, num_envs=3, n_per_env=1500,
                           decoder_degree=2, eta=0.0, mu_v=(0.0, 0.0, 0.0),
                           seed=0)
        from cirrl.scm import ScmSystem, generate_test
        big = generate_test(ScmSystem.from_config(gencfg), gencfg, 60000)
        design = np.column_stack([big.Z_true, np.ones(len(big.Y))])
        coef, *_ = np.linalg.lstsq(design, big.Y, rcond=None)
        resid_var = float(((design @ coef - big.Y) ** 2).mean())
        assert ood[0] == pytest.approx(resid_var, rel=0.15)

    def test_elbow_table(self, tmp_path):
        xcfg = load_config(tiny_config(tmp_path))
        path = cmd_elbow(xcfg, [1, 2])
        rows = list(csv.DictReader(open(path)))
        assert [r["dim"] for r in rows] == ["1", "2"]
        assert all(r["error"] == "" for r in rows)
        assert all(math.isfinite(float(r["final_loss"])) for r in rows)


class TestCli:
    def test_generate_and_evaluate(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert main(["generate", "--config", str(cfg)]) == 0
        printed = capsys.readouterr().out.splitlines()
        assert any(p.endswith("dataset_s0.csv") for p in printed)
        assert main(["sweep", "--config", str(cfg)]) == 0
        results = capsys.readouterr().out.strip()
        assert os.path.exists(results)

    def test_gamma_override_changes_rows(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert main(["sweep", "--config", str(cfg), "--gamma", "0,2.5"]) == 0
        results = capsys.readouterr().out.strip()
        gammas = {r["gamma"] for r in csv.DictReader(open(results))
                  if r["method"] == "cirrl"}
        assert gammas == {"0", "2.5", ""}  # "" is the loss_rl_final row

    def test_elbow_subcommand(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert main(["elbow", "--config", str(cfg), "--dims", "1,2"]) == 0
        path = capsys.readouterr().out.strip()
        assert os.path.basename(path) == "elbow.csv"
        assert len(list(csv.DictReader(open(path)))) == 2

    def test_bad_flag_values_exit_nonzero(self, tmp_path):
        cfg = tiny_config(tmp_path)
        with pytest.raises(SystemExit):
            main(["sweep", "--config", str(cfg), "--gamma", "a,b"])
        with pytest.raises(SystemExit):
            main(["badcommand", "--config", str(cfg)])
