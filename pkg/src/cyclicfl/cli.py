"""Command-line interface.

Subcommands: run, comm, consistency, landscape, partition-stats. Every
command takes --config pointing at a JSON file (see config.DEFAULTS for the
schema); --seed/--out/--p1-rounds/--strategy/--beta/--threads override
individual fields. Exit codes: 0 success, 2 configuration or input error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import checkpoint, config, landscape, nn, theory
from .cyclic import random_sample
from .data import dirichlet_partition, partition_label_entropies
from .errors import ConfigError, DataFormatError, DivergenceError
from .ioutil import atomic_write_text, fmt_float
from .orchestrator import (
    comm_units_total,
    rounds_to_target,
    run_experiment,
    run_quadratic_experiment,
    should_eval,
)
from .rng import substream
from .strategies import STRATEGY_KINDS


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="path to the JSON config file")
    shared.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    shared.add_argument("--out", default=None, help="override the output directory")
    shared.add_argument("--p1-rounds", type=int, default=None, help="override p1.rounds")
    shared.add_argument("--strategy", choices=STRATEGY_KINDS, default=None)
    shared.add_argument("--beta", type=float, default=None, help="override partition.beta")
    shared.add_argument("--threads", type=int, default=None, help="parallel client updates")

    parser = argparse.ArgumentParser(prog="cyclicfl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[shared], help="train and write logs")
    sub.add_parser("comm", parents=[shared], help="print closed-form communication totals")
    sub.add_parser("consistency", parents=[shared], help="kernel transfer diagnostic")
    p_land = sub.add_parser("landscape", parents=[shared], help="loss-surface slice to CSV")
    p_land.add_argument("--checkpoint", required=True, help="parameter checkpoint to slice around")
    sub.add_parser("partition-stats", parents=[shared], help="per-device partition summary")
    return parser


def _resolved(args) -> dict:
    file_cfg = config.load_config_file(args.config)
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "p1_rounds": args.p1_rounds,
        "strategy": args.strategy,
        "beta": args.beta,
        "threads": args.threads,
    }
    return config.resolve(file_cfg, overrides)


def _placeholder_spec() -> nn.ModelSpec:
    # round/device arithmetic does not touch the model; any valid spec works
    return nn.ModelSpec(input_dim=2, hidden_dims=(), output_dim=2)


def _build_partitioned(cfg):
    kind, train, test = config.build_dataset(cfg)
    if kind != "nn":
        raise ConfigError("this command needs a classification dataset, not quadratics")
    part = dirichlet_partition(
        train,
        cfg["devices"],
        cfg["partition"]["beta"],
        cfg["seed"],
        min_per_client=cfg["partition"]["min_per_client"],
    )
    return train, test, part


def _write_rounds_csv(path: str, logs) -> None:
    lines = ["round,phase,sampled_count,train_loss,test_acc,grad_norm_sq,cum_comm_units"]
    for entry in logs:
        lines.append(
            ",".join(
                (
                    str(entry.round_idx),
                    entry.phase,
                    str(len(entry.sampled)),
                    fmt_float(entry.train_loss),
                    fmt_float(entry.test_acc),
                    fmt_float(entry.grad_norm_sq),
                    fmt_float(entry.cum_comm_units),
                )
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = _resolved(args)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "resolved_config.json"), cfg)
    started = time.perf_counter()

    def snapshot_hook(exp):
        if not cfg["checkpoint"]["every_eval"]:
            return None

        def on_log(entry, w):
            if should_eval(entry.round_idx, exp.eval_every, exp.total_rounds):
                name = f"model_round_{entry.round_idx:05d}.bin"
                checkpoint.save_params(os.path.join(out_dir, name), w)

        return on_log

    kind, train, test = config.build_dataset(cfg)
    if kind == "quadratic":
        exp = config.build_experiment_config(cfg, _placeholder_spec())
        params, logs = run_quadratic_experiment(exp, train, on_log=snapshot_hook(exp))
    else:
        spec = config.build_model_spec(cfg, train.dim, train.num_classes)
        exp = config.build_experiment_config(cfg, spec)
        part = dirichlet_partition(
            train,
            cfg["devices"],
            cfg["partition"]["beta"],
            cfg["seed"],
            min_per_client=cfg["partition"]["min_per_client"],
        )
        params, logs = run_experiment(exp, train, part, test_set=test, on_log=snapshot_hook(exp))

    _write_rounds_csv(os.path.join(out_dir, "rounds.csv"), logs)
    if cfg["checkpoint"]["final"]:
        checkpoint.save_params(os.path.join(out_dir, "model_final.bin"), params)

    evaluated = [e.test_acc for e in logs if not math.isnan(e.test_acc)]
    target = cfg["eval"]["target_accuracy"]
    summary = {
        "strategy": cfg["strategy"],
        "seed": cfg["seed"],
        "rounds_total": len(logs),
        "param_count": int(params.size),
        "final_train_loss": logs[-1].train_loss if logs else None,
        "final_grad_norm_sq": logs[-1].grad_norm_sq if logs else None,
        "max_test_acc": max(evaluated) if evaluated else None,
        "rounds_to_target": rounds_to_target(logs, target) if target is not None else None,
        "target_accuracy": target,
        "cum_comm_units": logs[-1].cum_comm_units if logs else 0.0,
        "comm_units_closed_form": comm_units_total(exp),
        "wall_time_seconds": time.perf_counter() - started,
    }
    if kind == "quadratic":
        summary["distance_to_optimum"] = train.distance_to_optimum(params)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    print(f"run complete: {len(logs)} rounds, outputs in {out_dir}")
    if evaluated:
        print(f"max test accuracy {max(evaluated):.4f}")
    return 0


def cmd_comm(args) -> int:
    """Closed-form totals with and without the chain phase, all strategies.

    The without-chain variant spends the full round budget in the parallel
    phase, so both columns cover p1.rounds + p2.rounds rounds.
    """
    cfg = _resolved(args)
    spec = _placeholder_spec()
    total_rounds = cfg["p1"]["rounds"] + cfg["p2"]["rounds"]
    print("strategy,without_chain,with_chain")
    for strategy in STRATEGY_KINDS:
        exp_with = config.build_experiment_config({**cfg, "strategy": strategy}, spec)
        exp_without = config.build_experiment_config(
            {
                **cfg,
                "strategy": strategy,
                "p1": {**cfg["p1"], "rounds": 0},
                "p2": {**cfg["p2"], "rounds": total_rounds},
            },
            spec,
        )
        print(
            f"{strategy},{fmt_float(comm_units_total(exp_without))},"
            f"{fmt_float(comm_units_total(exp_with))}"
        )
    return 0


def cmd_consistency(args) -> int:
    cfg = _resolved(args)
    train, _, part = _build_partitioned(cfg)
    exp = config.build_experiment_config(
        cfg, config.build_model_spec(cfg, train.dim, train.num_classes)
    )
    devices = set()
    for t in range(exp.p1.rounds):
        devices.update(
            int(d)
            for d in random_sample(range(exp.num_devices), exp.p1.devices_per_round, exp.seed, t)
        )
    if not devices:
        raise ConfigError("p1.rounds is 0; no chain devices to diagnose")
    report = theory.consistency_from_partition(
        train,
        part,
        sorted(devices),
        cfg["consistency"]["probe_size"],
        cfg["seed"],
        ridge=cfg["consistency"]["ridge"],
        positive_class=cfg["consistency"]["positive_class"],
    )
    print(f"n_p={report.n_p}")
    print(f"n_q={report.n_q}")
    print(f"chain_devices={len(devices)}")
    if report.positive_class is not None:
        print(f"positive_class={report.positive_class}")
    print(f"lambda_p={fmt_float(report.lambda_p)}")
    print(f"discrepancy={fmt_float(report.discrepancy)}")
    return 0


def cmd_landscape(args) -> int:
    cfg = _resolved(args)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    params = checkpoint.load_params(args.checkpoint)
    ls = cfg["landscape"]
    slice_spec = landscape.SliceSpec(
        resolution=ls["resolution"],
        span=ls["span"],
        normalization=ls["normalization"],
        seed=cfg["seed"] if ls["seed"] is None else ls["seed"],
    )
    kind, train, test = config.build_dataset(cfg)
    if kind == "quadratic":
        if params.size != train.dim:
            raise ConfigError(
                f"checkpoint holds {params.size} parameters, workload has dim {train.dim}"
            )
        grid = landscape.slice_grid(train.global_loss, params, slice_spec)
    else:
        spec = config.build_model_spec(cfg, train.dim, train.num_classes)
        if params.size != spec.param_count:
            raise ConfigError(
                f"checkpoint holds {params.size} parameters, model needs {spec.param_count}"
            )
        probe_src = test if test is not None else train
        take = min(ls["probe_size"], probe_src.size)
        idx = np.sort(
            substream(cfg["seed"], "landscape-probe").choice(
                probe_src.size, size=take, replace=False
            )
        )
        probe = nn.Batch(probe_src.features[idx], probe_src.labels[idx])
        grid = landscape.model_slice(spec, params, probe, slice_spec)
    path = os.path.join(out_dir, "landscape.csv")
    landscape.write_grid_csv(path, grid, slice_spec)
    print(f"grid written to {path}")
    print(f"sharpness={fmt_float(landscape.sharpness(grid))}")
    return 0


def cmd_partition_stats(args) -> int:
    cfg = _resolved(args)
    train, _, part = _build_partitioned(cfg)
    sizes = part.sizes
    entropies = partition_label_entropies(train, part)
    print(f"devices={part.num_devices}")
    print(f"samples={train.size}")
    print(f"classes={train.num_classes}")
    print(f"beta={fmt_float(part.beta)}")
    print(f"min_client_size={int(sizes.min())}")
    print(f"mean_client_size={fmt_float(sizes.mean())}")
    print(f"max_client_size={int(sizes.max())}")
    print(f"mean_label_entropy={fmt_float(entropies.mean())}")
    return 0


_COMMANDS = {
    "run": cmd_run,
    "comm": cmd_comm,
    "consistency": cmd_consistency,
    "landscape": cmd_landscape,
    "partition-stats": cmd_partition_stats,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
