"""Two-phase experiment driver.

Phase 1 hands one live model around a sampled chain of devices (no
aggregation); phase 2 is standard parallel federated optimization with the
configured strategy. One round counter spans both phases and drives the
learning-rate schedule, device sampling and batch shuffling, so a finished
run is reproducible from its config alone.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .cyclic import CyclicConfig, cyclic_pretrain, random_sample
from .data import BatchStream, Dataset, Partition, QuadraticWorkload
from .rng import substream
from .strategies import (
    STRATEGY_KINDS,
    Hyperparams,
    StrategyState,
    aggregate,
    apply_local_update,
    local_update,
    quadratic_local_update,
    scaffold_server_update,
)

PHASE_CHAIN = "P1"
PHASE_PARALLEL = "P2"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs besides the data itself."""

    model: nn.ModelSpec
    num_devices: int
    p1: CyclicConfig
    p2_rounds: int
    p2_fraction: float
    strategy: str = "fedavg"
    hp: Hyperparams = field(default_factory=Hyperparams)
    eval_every: int = 1
    target_accuracy: float | None = None
    seed: int = 0
    p2_steps_cap: int | None = None
    reset_lr_schedule: bool = False
    probe_size: int = 256
    threads: int = 1

    def __post_init__(self):
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")
        if self.p2_rounds < 0:
            raise ValueError("p2_rounds must be >= 0")
        if not 0.0 < self.p2_fraction <= 1.0:
            raise ValueError("p2_fraction must be in (0, 1]")
        if self.strategy not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.p2_steps_cap is not None and self.p2_steps_cap < 1:
            raise ValueError("p2_steps_cap must be >= 1")
        if self.probe_size < 1:
            raise ValueError("probe_size must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.p1.rounds > 0 and self.p1.devices_per_round > self.num_devices:
            raise ValueError("p1.devices_per_round exceeds num_devices")

    @property
    def total_rounds(self) -> int:
        return self.p1.rounds + self.p2_rounds

    @property
    def p2_sample_size(self) -> int:
        # ceil with a tiny slack so fractions like 0.1 * 30 do not round up
        # through float error.
        return max(1, math.ceil(self.p2_fraction * self.num_devices - 1e-9))


@dataclass(frozen=True)
class RoundLog:
    """One row of the training log."""

    round_idx: int
    phase: str
    sampled: tuple
    train_loss: float
    test_acc: float
    grad_norm_sq: float
    cum_comm_units: float


def grad_norm_probe(spec: nn.ModelSpec, params: np.ndarray, probe: nn.Batch) -> float:
    """Squared gradient norm of the mean loss on a fixed probe batch."""
    _, grad = nn.loss_and_grad(spec, params, probe)
    return float(grad @ grad)


def _probe_batch(dataset: Dataset, size: int, seed: int) -> nn.Batch:
    rng = substream(seed, "probe")
    take = min(size, dataset.size)
    idx = np.sort(rng.choice(dataset.size, size=take, replace=False))
    return nn.Batch(dataset.features[idx], dataset.labels[idx])


def should_eval(round_idx: int, every: int, total: int) -> bool:
    """Eval cadence: every N rounds, plus always the last round."""
    return (round_idx + 1) % every == 0 or round_idx == total - 1


def run_experiment(
    cfg: ExperimentConfig,
    dataset: Dataset,
    partition: Partition,
    test_set: Dataset | None = None,
    on_log=None,
):
    """Run phase 1 then phase 2 and return (final_params, [RoundLog]).

    test_acc is recorded on eval rounds when a test set is given and is NaN
    otherwise. Communication is counted per model transfer: two per chain
    visit, two per sampled device per parallel round, four under scaffold
    (the control variate travels with the model in both directions).
    on_log, if given, is called with (RoundLog, params) after every round.
    """
    spec = cfg.model
    if partition.num_devices != cfg.num_devices:
        raise ValueError("partition does not match num_devices")
    probe = _probe_batch(dataset, cfg.probe_size, cfg.seed)
    params = nn.init_params(spec, cfg.seed)
    state = StrategyState.create(cfg.strategy, spec.param_count)
    logs: list[RoundLog] = []
    comm = 0.0
    total = cfg.total_rounds

    def eval_acc(w: np.ndarray, round_idx: int) -> float:
        if test_set is None or not should_eval(round_idx, cfg.eval_every, total):
            return float("nan")
        return nn.evaluate(spec, w, test_set)[0]

    # Phase 1: the chain. Sampling, shuffling and the lr schedule all key
    # off the experiment seed and the global round counter.
    p1_cfg = replace(cfg.p1, seed=cfg.seed)

    def on_round(t, w, round_visits):
        nonlocal comm
        comm += 2.0 * len(round_visits)
        steps = sum(v.steps for v in round_visits)
        loss = sum(v.mean_loss * v.steps for v in round_visits) / steps
        logs.append(
            RoundLog(
                round_idx=t,
                phase=PHASE_CHAIN,
                sampled=tuple(v.device for v in round_visits),
                train_loss=float(loss),
                test_acc=eval_acc(w, t),
                grad_norm_sq=grad_norm_probe(spec, w, probe),
                cum_comm_units=comm,
            )
        )
        if on_log is not None:
            on_log(logs[-1], w)

    params, _ = cyclic_pretrain(spec, params, dataset, partition, cfg.hp, p1_cfg, on_round=on_round)

    # Phase 2: parallel rounds on the aggregated model.
    units_per_device = 4.0 if cfg.strategy == "scaffold" else 2.0
    for t in range(cfg.p1.rounds, total):
        sampled = random_sample(range(cfg.num_devices), cfg.p2_sample_size, cfg.seed, t, phase="p2")
        sched_round = t - cfg.p1.rounds if cfg.reset_lr_schedule else t

        def run_one(device, w=params, r=sched_round):
            stream = BatchStream(
                dataset, partition.assignments[device], int(device), cfg.hp.batch_size, cfg.seed
            )
            return local_update(
                cfg.strategy, spec, w, stream, cfg.hp, state, r, steps_cap=cfg.p2_steps_cap
            )

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                updates = list(pool.map(run_one, sampled))
        else:
            updates = [run_one(d) for d in sampled]

        weights = [partition.assignments[d].size for d in sampled]
        new_params = aggregate(list(zip((u.params for u in updates), weights)))

        old_variates = None
        if cfg.strategy == "scaffold":
            old_variates = {int(d): state.client_variate(int(d)) for d in sampled}
        for device, update in zip(sampled, updates):
            apply_local_update(state, int(device), update)
        if cfg.strategy == "scaffold":
            scaffold_server_update(state, [int(d) for d in sampled], old_variates, cfg.num_devices)

        params = new_params
        comm += units_per_device * len(sampled)
        train_loss = float(
            sum(u.mean_loss * w for u, w in zip(updates, weights)) / sum(weights)
        )
        logs.append(
            RoundLog(
                round_idx=t,
                phase=PHASE_PARALLEL,
                sampled=tuple(int(d) for d in sampled),
                train_loss=train_loss,
                test_acc=eval_acc(params, t),
                grad_norm_sq=grad_norm_probe(spec, params, probe),
                cum_comm_units=comm,
            )
        )
        if on_log is not None:
            on_log(logs[-1], params)
    return params, logs


def run_quadratic_experiment(cfg: ExperimentConfig, workload: QuadraticWorkload, on_log=None):
    """Same two-phase protocol on closed-form quadratic device objectives.

    One local step is one full gradient step. test_acc has no meaning here
    and is logged as NaN; train_loss is the global objective value and
    grad_norm_sq its squared gradient norm.
    """
    if cfg.strategy == "moon":
        raise ValueError("moon is undefined for quadratic workloads")
    if workload.num_devices != cfg.num_devices:
        raise ValueError("workload does not match num_devices")
    params = substream(cfg.seed, "quad-init").standard_normal(workload.dim)
    state = StrategyState.create(cfg.strategy, workload.dim)
    logs: list[RoundLog] = []
    comm = 0.0
    total = cfg.total_rounds

    def log_round(t, phase, sampled):
        logs.append(
            RoundLog(
                round_idx=t,
                phase=phase,
                sampled=tuple(int(d) for d in sampled),
                train_loss=workload.global_loss(params),
                test_acc=float("nan"),
                grad_norm_sq=float(np.sum(workload.global_grad(params) ** 2)),
                cum_comm_units=comm,
            )
        )
        if on_log is not None:
            on_log(logs[-1], params)

    for t in range(cfg.p1.rounds):
        order = random_sample(range(cfg.num_devices), cfg.p1.devices_per_round, cfg.seed, t)
        for device in order:
            update = quadratic_local_update(
                "fedavg", workload, int(device), params, cfg.hp, None, t, steps=1
            )
            params = update.params
        comm += 2.0 * len(order)
        log_round(t, PHASE_CHAIN, order)

    units_per_device = 4.0 if cfg.strategy == "scaffold" else 2.0
    steps = cfg.hp.local_epochs if cfg.p2_steps_cap is None else min(
        cfg.hp.local_epochs, cfg.p2_steps_cap
    )
    for t in range(cfg.p1.rounds, total):
        sampled = random_sample(range(cfg.num_devices), cfg.p2_sample_size, cfg.seed, t, phase="p2")
        sched_round = t - cfg.p1.rounds if cfg.reset_lr_schedule else t
        updates = [
            quadratic_local_update(
                cfg.strategy, workload, int(d), params, cfg.hp, state, sched_round, steps
            )
            for d in sampled
        ]
        new_params = aggregate([(u.params, 1.0) for u in updates])
        old_variates = None
        if cfg.strategy == "scaffold":
            old_variates = {int(d): state.client_variate(int(d)) for d in sampled}
        for device, update in zip(sampled, updates):
            apply_local_update(state, int(device), update)
        if cfg.strategy == "scaffold":
            scaffold_server_update(state, [int(d) for d in sampled], old_variates, cfg.num_devices)
        params = new_params
        comm += units_per_device * len(sampled)
        log_round(t, PHASE_PARALLEL, sampled)
    return params, logs


def rounds_to_target(logs, target: float):
    """First evaluated round whose test accuracy reaches target, else None."""
    for entry in logs:
        if not math.isnan(entry.test_acc) and entry.test_acc >= target:
            return entry.round_idx
    return None


def comm_units_total(cfg: ExperimentConfig, model_units: float = 1.0) -> float:
    """Closed-form transfer total for a full run of cfg.

    Chain phase: 2 * devices_per_round * rounds. Parallel phase: 2 (or 4
    under scaffold) per sampled device per round. Matches the emergent
    counter in the logs exactly.
    """
    chain = 2.0 * cfg.p1.devices_per_round * cfg.p1.rounds if cfg.p1.rounds > 0 else 0.0
    per_device = 4.0 if cfg.strategy == "scaffold" else 2.0
    parallel = per_device * cfg.p2_sample_size * cfg.p2_rounds
    return (chain + parallel) * model_units
