"""Cyclic sequential pre-training.

One live model is handed from device to device. Each visited device runs a
short burst of plain SGD on its own data and passes the result on; there is
no aggregation anywhere in this phase. Every visit logs content hashes of
the incoming and outgoing parameter vectors so the hand-off chain can be
audited after the fact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .data import BatchStream, Dataset, Partition
from .rng import substream
from .strategies import Hyperparams, local_update


@dataclass(frozen=True)
class CyclicConfig:
    """Shape of the pre-training phase.

    rounds may be zero, which turns the phase into a no-op. Each round
    visits devices_per_round freshly sampled devices in sampled order; a
    visit runs min(max_local_steps, one epoch) mini-batch steps.
    """

    rounds: int
    devices_per_round: int
    max_local_steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.devices_per_round < 1:
            raise ValueError("devices_per_round must be >= 1")
        if self.max_local_steps < 1:
            raise ValueError("max_local_steps must be >= 1")


@dataclass(frozen=True)
class DeviceVisit:
    """One hand-off link: device, work done, and parameter hashes."""

    round_idx: int
    device: int
    steps: int
    mean_loss: float
    params_in_hash: str
    params_out_hash: str


def params_hash(params: np.ndarray) -> str:
    """Short content hash of a float64 parameter vector."""
    return hashlib.sha256(np.ascontiguousarray(params, dtype=np.float64).tobytes()).hexdigest()[:16]


def random_sample(all_devices, k: int, seed: int, round_idx: int, phase: str = "p1") -> np.ndarray:
    """Sample k devices uniformly without replacement, in visiting order.

    Deterministic in (seed, phase, round_idx). k equal to the population
    size yields a uniform random permutation.
    """
    devices = np.asarray(list(all_devices), dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > devices.size:
        raise ValueError(f"cannot sample {k} of {devices.size} devices")
    rng = substream(seed, f"{phase}-sample", round_idx)
    return devices[rng.choice(devices.size, size=k, replace=False)]


def visit_steps(num_samples: int, batch_size: int, max_local_steps: int) -> int:
    """Steps a visited device runs: min(max_local_steps, one epoch)."""
    return min(max_local_steps, math.ceil(num_samples / batch_size))


def cyclic_pretrain(
    spec,
    start_params: np.ndarray,
    dataset: Dataset,
    partition: Partition,
    hp: Hyperparams,
    cfg: CyclicConfig,
    on_round=None,
):
    """Run the sequential chain and return (params, visit log).

    The learning-rate schedule advances with the round counter, so round t
    uses hp.effective_lr(t). on_round, if given, is called after each round
    with (round_idx, params, visits_of_that_round).
    """
    params = np.array(start_params, dtype=np.float64, copy=True)
    num_devices = partition.num_devices
    visits: list[DeviceVisit] = []
    for t in range(cfg.rounds):
        order = random_sample(range(num_devices), cfg.devices_per_round, cfg.seed, t)
        round_visits = []
        for device in order:
            stream = BatchStream(
                dataset, partition.assignments[device], int(device), hp.batch_size, cfg.seed
            )
            cap = visit_steps(stream.num_samples, hp.batch_size, cfg.max_local_steps)
            in_hash = params_hash(params)
            update = local_update("fedavg", spec, params, stream, hp, None, t, steps_cap=cap)
            params = update.params
            round_visits.append(
                DeviceVisit(
                    round_idx=t,
                    device=int(device),
                    steps=update.steps,
                    mean_loss=update.mean_loss,
                    params_in_hash=in_hash,
                    params_out_hash=params_hash(params),
                )
            )
        visits.extend(round_visits)
        if on_round is not None:
            on_round(t, params, round_visits)
    return params, visits


def comm_units_p1(cfg: CyclicConfig, model_units: float = 1.0) -> float:
    """Transfers in the chain phase: each visit is one down- and one uplink."""
    return 2.0 * cfg.devices_per_round * cfg.rounds * model_units
