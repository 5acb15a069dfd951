"""Run configuration: JSON file -> validated, fully-resolved settings.

A config file is a JSON object; every key is optional and falls back to the
defaults below. Precedence, lowest to highest: defaults, file, environment
(CYCLICFL_SEED, CYCLICFL_OUT), command-line flags. Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import json
import math
import os

from .cyclic import CyclicConfig
from .errors import ConfigError
from .nn import ModelSpec
from .orchestrator import ExperimentConfig
from .strategies import STRATEGY_KINDS, Hyperparams

ENV_SEED = "CYCLICFL_SEED"
ENV_OUT = "CYCLICFL_OUT"

DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/run",
    "threads": 1,
    "devices": 100,
    "strategy": "fedavg",
    "model": {
        "hidden_dims": [32],
        "activation": "relu",
    },
    "dataset": {
        "source": "blobs",
        # blobs
        "num_classes": 10,
        "dim": 20,
        "per_class": 625,
        "spread": 0.3,
        # csv
        "path": None,
        "skip_header": False,
        "test_path": None,
        # idx
        "images": None,
        "labels": None,
        "test_images": None,
        "test_labels": None,
        # quadratics
        "heterogeneity": 1.0,
        # shared holdout used when no explicit test files are given
        "holdout_fraction": 0.2,
    },
    "partition": {
        "beta": 0.5,
        "min_per_client": 1,
    },
    "p1": {
        "rounds": 100,
        "fraction": 0.25,
        "devices_per_round": None,
        "max_local_steps": 20,
    },
    "p2": {
        "rounds": 900,
        "fraction": 0.10,
        "steps_cap": None,
        "reset_lr_schedule": False,
    },
    "hyperparams": {
        "lr": 0.01,
        "momentum": 0.0,
        "weight_decay": 0.0,
        "batch_size": 32,
        "local_epochs": 5,
        "lr_decay_per_round": 0.998,
        "mu_prox": 0.01,
        "tau_moon": 0.5,
        "mu_moon": 0.1,
    },
    "eval": {
        "every": 1,
        "target_accuracy": None,
        "probe_size": 256,
    },
    "landscape": {
        "resolution": 41,
        "span": 1.0,
        "normalization": "layerwise",
        "probe_size": 256,
        "seed": None,
    },
    "consistency": {
        "probe_size": 200,
        "ridge": 1e-8,
        "positive_class": 0,
    },
    "checkpoint": {
        "final": True,
        "every_eval": False,
    },
}

_SOURCES = ("blobs", "csv", "idx", "quadratics")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted!r} must be an object")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _check_int(value, name: str, minimum=None):
    _require(isinstance(value, int) and not isinstance(value, bool), f"{name} must be an integer")
    if minimum is not None:
        _require(value >= minimum, f"{name} must be >= {minimum}")
    return int(value)


def _check_num(value, name: str):
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool),
        f"{name} must be a number",
    )
    return float(value)


def ceil_fraction(fraction: float, total: int) -> int:
    """ceil(fraction * total) robust to float error, clamped to [1, total]."""
    k = math.ceil(fraction * total - 1e-9)
    return max(1, min(total, k))


def load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def resolve(file_cfg: dict, overrides: dict | None = None, env: dict | None = None) -> dict:
    """Merge defaults, file, environment and flag overrides; validate."""
    cfg = _merge(DEFAULTS, file_cfg)
    env = os.environ if env is None else env
    if env.get(ENV_SEED):
        try:
            cfg["seed"] = int(env[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer") from exc
    if env.get(ENV_OUT):
        cfg["out_dir"] = env[ENV_OUT]
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg["seed"] = value
        elif key == "out_dir":
            cfg["out_dir"] = value
        elif key == "threads":
            cfg["threads"] = value
        elif key == "strategy":
            cfg["strategy"] = value
        elif key == "p1_rounds":
            cfg["p1"]["rounds"] = value
        elif key == "beta":
            cfg["partition"]["beta"] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    _check_int(cfg["seed"], "seed")
    _require(isinstance(cfg["out_dir"], str) and cfg["out_dir"], "out_dir must be a non-empty string")
    _check_int(cfg["threads"], "threads", 1)
    _check_int(cfg["devices"], "devices", 1)
    _require(cfg["strategy"] in STRATEGY_KINDS, f"strategy must be one of {STRATEGY_KINDS}")

    model = cfg["model"]
    _require(isinstance(model["hidden_dims"], list), "model.hidden_dims must be a list")
    for h in model["hidden_dims"]:
        _check_int(h, "model.hidden_dims entries", 1)
    _require(len(model["hidden_dims"]) <= 2, "model.hidden_dims supports at most two layers")
    _require(model["activation"] in ("relu", "tanh"), "model.activation must be relu or tanh")

    ds = cfg["dataset"]
    _require(ds["source"] in _SOURCES, f"dataset.source must be one of {_SOURCES}")
    if ds["source"] == "blobs":
        _check_int(ds["num_classes"], "dataset.num_classes", 2)
        _check_int(ds["dim"], "dataset.dim", 1)
        _check_int(ds["per_class"], "dataset.per_class", 1)
        _require(_check_num(ds["spread"], "dataset.spread") >= 0, "dataset.spread must be >= 0")
    elif ds["source"] == "csv":
        _require(isinstance(ds["path"], str) and ds["path"], "dataset.path is required for csv")
    elif ds["source"] == "idx":
        _require(
            isinstance(ds["images"], str) and isinstance(ds["labels"], str),
            "dataset.images and dataset.labels are required for idx",
        )
    else:
        _check_int(ds["dim"], "dataset.dim", 1)
        _require(
            _check_num(ds["heterogeneity"], "dataset.heterogeneity") >= 0,
            "dataset.heterogeneity must be >= 0",
        )
        _require(
            cfg["strategy"] != "moon",
            "moon is undefined for quadratic workloads",
        )
    frac = _check_num(ds["holdout_fraction"], "dataset.holdout_fraction")
    _require(0.0 < frac < 1.0, "dataset.holdout_fraction must be in (0, 1)")

    part = cfg["partition"]
    _require(_check_num(part["beta"], "partition.beta") > 0, "partition.beta must be positive")
    _check_int(part["min_per_client"], "partition.min_per_client", 1)

    p1 = cfg["p1"]
    _check_int(p1["rounds"], "p1.rounds", 0)
    frac = _check_num(p1["fraction"], "p1.fraction")
    _require(0.0 < frac <= 1.0, "p1.fraction must be in (0, 1]")
    if p1["devices_per_round"] is not None:
        _check_int(p1["devices_per_round"], "p1.devices_per_round", 1)
        _require(
            p1["devices_per_round"] <= cfg["devices"],
            "p1.devices_per_round exceeds devices",
        )
    _check_int(p1["max_local_steps"], "p1.max_local_steps", 1)

    p2 = cfg["p2"]
    _check_int(p2["rounds"], "p2.rounds", 0)
    frac = _check_num(p2["fraction"], "p2.fraction")
    _require(0.0 < frac <= 1.0, "p2.fraction must be in (0, 1]")
    if p2["steps_cap"] is not None:
        _check_int(p2["steps_cap"], "p2.steps_cap", 1)
    _require(isinstance(p2["reset_lr_schedule"], bool), "p2.reset_lr_schedule must be a boolean")

    hp = cfg["hyperparams"]
    try:
        build_hyperparams(cfg)
    except ValueError as exc:
        raise ConfigError(f"hyperparams: {exc}") from exc
    _check_int(hp["batch_size"], "hyperparams.batch_size", 1)
    _check_int(hp["local_epochs"], "hyperparams.local_epochs", 1)

    ev = cfg["eval"]
    _check_int(ev["every"], "eval.every", 1)
    if ev["target_accuracy"] is not None:
        _check_num(ev["target_accuracy"], "eval.target_accuracy")
    _check_int(ev["probe_size"], "eval.probe_size", 1)

    ls = cfg["landscape"]
    res = _check_int(ls["resolution"], "landscape.resolution", 3)
    _require(res % 2 == 1, "landscape.resolution must be odd")
    _require(_check_num(ls["span"], "landscape.span") > 0, "landscape.span must be positive")
    _require(
        ls["normalization"] in ("layerwise", "none"),
        "landscape.normalization must be layerwise or none",
    )
    _check_int(ls["probe_size"], "landscape.probe_size", 1)
    if ls["seed"] is not None:
        _check_int(ls["seed"], "landscape.seed")

    cons = cfg["consistency"]
    _check_int(cons["probe_size"], "consistency.probe_size", 1)
    _require(_check_num(cons["ridge"], "consistency.ridge") >= 0, "consistency.ridge must be >= 0")
    _check_int(cons["positive_class"], "consistency.positive_class", 0)

    ck = cfg["checkpoint"]
    _require(isinstance(ck["final"], bool), "checkpoint.final must be a boolean")
    _require(isinstance(ck["every_eval"], bool), "checkpoint.every_eval must be a boolean")


def build_hyperparams(cfg: dict) -> Hyperparams:
    hp = cfg["hyperparams"]
    return Hyperparams(
        lr=float(hp["lr"]),
        momentum=float(hp["momentum"]),
        weight_decay=float(hp["weight_decay"]),
        batch_size=int(hp["batch_size"]),
        local_epochs=int(hp["local_epochs"]),
        lr_decay_per_round=float(hp["lr_decay_per_round"]),
        mu_prox=float(hp["mu_prox"]),
        tau_moon=float(hp["tau_moon"]),
        mu_moon=float(hp["mu_moon"]),
    )


def build_dataset(cfg: dict):
    """Materialize the configured data.

    Returns ("nn", train, test) for classification sources or
    ("quadratic", workload, None) for the closed-form testbed.
    """
    from . import data

    ds = cfg["dataset"]
    seed = cfg["seed"]
    source = ds["source"]
    if source == "quadratics":
        workload = data.synth_quadratics(
            cfg["devices"], ds["dim"], ds["heterogeneity"], seed
        )
        return "quadratic", workload, None
    if source == "blobs":
        full = data.synth_blobs(ds["num_classes"], ds["dim"], ds["per_class"], ds["spread"], seed)
        train, test = data.holdout_split(full, ds["holdout_fraction"], seed)
        return "nn", train, test
    if source == "csv":
        full = data.load_csv(ds["path"], skip_header=bool(ds["skip_header"]))
        if ds["test_path"]:
            test = data.load_csv(ds["test_path"], skip_header=bool(ds["skip_header"]))
            return "nn", full, test
        train, test = data.holdout_split(full, ds["holdout_fraction"], seed)
        return "nn", train, test
    full = data.load_idx(ds["images"], ds["labels"])
    if ds["test_images"] and ds["test_labels"]:
        test = data.load_idx(ds["test_images"], ds["test_labels"])
        return "nn", full, test
    train, test = data.holdout_split(full, ds["holdout_fraction"], seed)
    return "nn", train, test


def build_model_spec(cfg: dict, input_dim: int, output_dim: int) -> ModelSpec:
    model = cfg["model"]
    return ModelSpec(
        input_dim=input_dim,
        hidden_dims=tuple(model["hidden_dims"]),
        output_dim=output_dim,
        activation=model["activation"],
    )


def p1_devices_per_round(cfg: dict) -> int:
    p1 = cfg["p1"]
    if p1["devices_per_round"] is not None:
        return int(p1["devices_per_round"])
    return ceil_fraction(p1["fraction"], cfg["devices"])


def build_experiment_config(cfg: dict, spec: ModelSpec) -> ExperimentConfig:
    p1 = CyclicConfig(
        rounds=cfg["p1"]["rounds"],
        devices_per_round=p1_devices_per_round(cfg),
        max_local_steps=cfg["p1"]["max_local_steps"],
        seed=cfg["seed"],
    )
    try:
        return ExperimentConfig(
            model=spec,
            num_devices=cfg["devices"],
            p1=p1,
            p2_rounds=cfg["p2"]["rounds"],
            p2_fraction=cfg["p2"]["fraction"],
            strategy=cfg["strategy"],
            hp=build_hyperparams(cfg),
            eval_every=cfg["eval"]["every"],
            target_accuracy=cfg["eval"]["target_accuracy"],
            seed=cfg["seed"],
            p2_steps_cap=cfg["p2"]["steps_cap"],
            reset_lr_schedule=cfg["p2"]["reset_lr_schedule"],
            probe_size=cfg["eval"]["probe_size"],
            threads=cfg["threads"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
