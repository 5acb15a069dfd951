import json

import pytest

from cyclicfl import config
from cyclicfl.config import (
    build_dataset,
    build_experiment_config,
    build_hyperparams,
    build_model_spec,
    ceil_fraction,
    load_config_file,
    p1_devices_per_round,
    resolve,
)
from cyclicfl.errors import ConfigError

NO_ENV = {}


def test_defaults_resolve_clean():
    cfg = resolve({}, env=NO_ENV)
    assert cfg["seed"] == 0
    assert cfg["strategy"] == "fedavg"
    assert cfg["p1"]["rounds"] == 100
    assert cfg["p2"]["rounds"] == 900
    assert cfg["hyperparams"]["lr"] == 0.01


def test_file_overrides_defaults():
    cfg = resolve({"seed": 7, "p2": {"rounds": 10}}, env=NO_ENV)
    assert cfg["seed"] == 7
    assert cfg["p2"]["rounds"] == 10
    assert cfg["p2"]["fraction"] == 0.10


def test_unknown_keys_rejected_with_dotted_path():
    with pytest.raises(ConfigError, match="p2.roundz"):
        resolve({"p2": {"roundz": 5}}, env=NO_ENV)
    with pytest.raises(ConfigError, match="stratgy"):
        resolve({"stratgy": "fedavg"}, env=NO_ENV)


def test_env_beats_file():
    cfg = resolve({"seed": 1, "out_dir": "from_file"},
                  env={"CYCLICFL_SEED": "42", "CYCLICFL_OUT": "from_env"})
    assert cfg["seed"] == 42
    assert cfg["out_dir"] == "from_env"
    with pytest.raises(ConfigError):
        resolve({}, env={"CYCLICFL_SEED": "not-a-number"})


def test_flags_beat_env():
    cfg = resolve({}, overrides={"seed": 9, "out_dir": "from_flag", "strategy": "moon",
                                 "p1_rounds": 3, "beta": 2.0, "threads": 4},
                  env={"CYCLICFL_SEED": "42", "CYCLICFL_OUT": "from_env"})
    assert cfg["seed"] == 9
    assert cfg["out_dir"] == "from_flag"
    assert cfg["strategy"] == "moon"
    assert cfg["p1"]["rounds"] == 3
    assert cfg["partition"]["beta"] == 2.0
    assert cfg["threads"] == 4


def test_none_overrides_are_ignored():
    cfg = resolve({"seed": 5}, overrides={"seed": None, "strategy": None}, env=NO_ENV)
    assert cfg["seed"] == 5
    assert cfg["strategy"] == "fedavg"


def test_validation_failures():
    bad = [
        {"strategy": "gossip"},
        {"devices": 0},
        {"seed": "zero"},
        {"model": {"hidden_dims": [8, 8, 8]}},
        {"model": {"activation": "gelu"}},
        {"dataset": {"source": "parquet"}},
        {"dataset": {"source": "csv"}},
        {"dataset": {"source": "idx"}},
        {"dataset": {"holdout_fraction": 1.0}},
        {"partition": {"beta": 0.0}},
        {"p1": {"fraction": 0.0}},
        {"p1": {"devices_per_round": 101}},
        {"p2": {"reset_lr_schedule": "yes"}},
        {"hyperparams": {"lr": -1.0}},
        {"hyperparams": {"momentum": 1.5}},
        {"eval": {"every": 0}},
        {"landscape": {"resolution": 40}},
        {"landscape": {"normalization": "filter"}},
        {"consistency": {"ridge": -1.0}},
        {"checkpoint": {"final": 1}},
        {"dataset": {"source": "quadratics"}, "strategy": "moon"},
    ]
    for file_cfg in bad:
        with pytest.raises(ConfigError):
            resolve(file_cfg, env=NO_ENV)


def test_bool_is_not_an_integer():
    with pytest.raises(ConfigError):
        resolve({"devices": True}, env=NO_ENV)


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3}))
    assert load_config_file(str(path)) == {"seed": 3}
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{seed: 3")
    with pytest.raises(ConfigError, match="JSON"):
        load_config_file(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        load_config_file(str(arr))


def test_ceil_fraction_robust():
    assert ceil_fraction(0.1, 30) == 3
    assert ceil_fraction(0.25, 100) == 25
    assert ceil_fraction(0.26, 100) == 26
    assert ceil_fraction(0.001, 10) == 1
    assert ceil_fraction(1.0, 7) == 7


def test_p1_devices_per_round_resolution():
    cfg = resolve({"devices": 20}, env=NO_ENV)
    assert p1_devices_per_round(cfg) == 5
    cfg = resolve({"devices": 20, "p1": {"devices_per_round": 7}}, env=NO_ENV)
    assert p1_devices_per_round(cfg) == 7


def test_build_hyperparams_and_model_spec():
    cfg = resolve({"hyperparams": {"lr": 0.5, "momentum": 0.9},
                   "model": {"hidden_dims": [16, 8], "activation": "tanh"}}, env=NO_ENV)
    hp = build_hyperparams(cfg)
    assert hp.lr == 0.5
    assert hp.momentum == 0.9
    spec = build_model_spec(cfg, input_dim=12, output_dim=4)
    assert spec.hidden_dims == (16, 8)
    assert spec.activation == "tanh"
    assert spec.input_dim == 12


def test_build_dataset_blobs_and_quadratics():
    cfg = resolve({"devices": 5, "dataset": {
        "num_classes": 3, "dim": 4, "per_class": 30, "spread": 0.2}}, env=NO_ENV)
    kind, train, test = build_dataset(cfg)
    assert kind == "nn"
    assert train.size + test.size == 90
    assert test.size == 18

    cfg = resolve({"devices": 5, "dataset": {"source": "quadratics", "dim": 3}}, env=NO_ENV)
    kind, workload, test = build_dataset(cfg)
    assert kind == "quadratic"
    assert workload.num_devices == 5
    assert workload.dim == 3
    assert test is None


def test_build_dataset_csv_with_explicit_test(tmp_path):
    train = tmp_path / "train.csv"
    train.write_text("".join(f"{i * 0.5},{i % 2}\n" for i in range(10)))
    testf = tmp_path / "test.csv"
    testf.write_text("0.1,0\n0.2,1\n")
    cfg = resolve({"dataset": {"source": "csv", "path": str(train),
                               "test_path": str(testf)}}, env=NO_ENV)
    kind, tr, te = build_dataset(cfg)
    assert kind == "nn"
    assert tr.size == 10
    assert te.size == 2


def test_build_experiment_config_wires_everything():
    raw = resolve({"devices": 12, "strategy": "scaffold", "seed": 4,
                   "p1": {"rounds": 2, "fraction": 0.5},
                   "p2": {"rounds": 3, "fraction": 0.25, "steps_cap": 6}}, env=NO_ENV)
    spec = build_model_spec(raw, input_dim=4, output_dim=3)
    cfg = build_experiment_config(raw, spec)
    assert cfg.num_devices == 12
    assert cfg.strategy == "scaffold"
    assert cfg.seed == 4
    assert cfg.p1.rounds == 2
    assert cfg.p1.devices_per_round == 6
    assert cfg.p1.seed == 4
    assert cfg.p2_rounds == 3
    assert cfg.p2_sample_size == 3
    assert cfg.p2_steps_cap == 6
    assert cfg.threads == 1


def test_build_experiment_config_surfaces_value_errors():
    raw = resolve({"devices": 3, "p1": {"rounds": 1}}, env=NO_ENV)
    raw["p1"]["devices_per_round"] = 5
    with pytest.raises(ConfigError):
        build_experiment_config(raw, build_model_spec(raw, 4, 3))


def test_defaults_are_not_mutated_by_resolve():
    before = json.dumps(config.DEFAULTS, sort_keys=True)
    resolve({"p2": {"rounds": 1}}, overrides={"beta": 9.0}, env=NO_ENV)
    assert json.dumps(config.DEFAULTS, sort_keys=True) == before
