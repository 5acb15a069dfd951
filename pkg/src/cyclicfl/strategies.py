"""Client update rules and server aggregation.

Four strategies share one SGD core:

  fedavg    plain SGD with optional momentum and weight decay
  fedprox   fedavg plus mu_prox * (w - w_global) pulled into the gradient
  scaffold  gradient corrected by (c_global - c_i); after K steps the client
            variate becomes c_i - c_global + (w_global - w_new) / (K * lr)
  moon      cross-entropy plus a contrastive penalty tying the mean hidden
            representation to the global model's and away from the client's
            previous local model's

local_update never mutates StrategyState; the new client variate rides back
on the result and the orchestrator commits it between rounds, so parallel
client updates stay race-free and deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nn
from .data import BatchStream, QuadraticWorkload
from .errors import DivergenceError

STRATEGY_KINDS = ("fedavg", "fedprox", "scaffold", "moon")


@dataclass(frozen=True)
class Hyperparams:
    """Local-training knobs shared by both phases."""

    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 32
    local_epochs: int = 5
    lr_decay_per_round: float = 0.998
    mu_prox: float = 0.01
    tau_moon: float = 0.5
    mu_moon: float = 0.1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if not 0.0 < self.lr_decay_per_round <= 1.0:
            raise ValueError("lr_decay_per_round must be in (0, 1]")
        if self.mu_prox < 0 or self.mu_moon < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.tau_moon <= 0:
            raise ValueError("tau_moon must be positive")

    def effective_lr(self, round_idx: int) -> float:
        return self.lr * self.lr_decay_per_round ** round_idx


@dataclass
class StrategyState:
    """Cross-round server-side state. Written only between parallel sections."""

    kind: str
    param_count: int
    c_global: np.ndarray | None = None
    c_client: dict = field(default_factory=dict)
    prev_local: dict = field(default_factory=dict)

    @classmethod
    def create(cls, kind: str, param_count: int) -> "StrategyState":
        if kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {kind!r}")
        c_global = np.zeros(param_count) if kind == "scaffold" else None
        return cls(kind=kind, param_count=param_count, c_global=c_global)

    def client_variate(self, device: int) -> np.ndarray:
        v = self.c_client.get(device)
        return np.zeros(self.param_count) if v is None else v

    def prev_model(self, device: int, global_params: np.ndarray) -> np.ndarray:
        v = self.prev_local.get(device)
        return global_params if v is None else v


@dataclass(frozen=True)
class LocalUpdate:
    """Result of one client's local pass."""

    params: np.ndarray
    steps: int
    mean_loss: float
    new_client_variate: np.ndarray | None = None


def _cosine_and_grad(z: np.ndarray, other: np.ndarray, eps: float = 1e-12):
    # cos(z, other) and its gradient in z; norms floored at eps so a dead
    # representation degrades smoothly instead of dividing by zero.
    nz = float(np.linalg.norm(z))
    no = float(np.linalg.norm(other))
    denom = max(nz * no, eps)
    sim = float(z @ other) / denom
    dz = other / denom - sim * z / max(nz * nz, eps)
    return sim, dz


def moon_contrastive(z: np.ndarray, z_global: np.ndarray, z_prev: np.ndarray, tau: float):
    """Contrastive penalty -log(e^(sg/tau) / (e^(sg/tau) + e^(sp/tau))).

    sg and sp are cosine similarities of z with the global and previous
    local representations. Returns (value, d value / d z). The value is
    log(2) exactly when sg equals sp.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    sg, dsg = _cosine_and_grad(z, z_global)
    sp, dsp = _cosine_and_grad(z, z_prev)
    u = (sp - sg) / tau
    value = float(np.logaddexp(0.0, u))
    dz = (float(expit(u)) / tau) * (dsp - dsg)
    return value, dz


def moon_loss_and_grad(
    spec: nn.ModelSpec,
    params: np.ndarray,
    batch: nn.Batch,
    global_params: np.ndarray,
    prev_params: np.ndarray,
    tau: float,
    mu: float,
):
    """Cross-entropy plus mu * contrastive term on the batch-mean hidden
    representation. Returns (ce_loss, contrastive_loss, flat_grad).

    Without hidden layers the representation is the raw features, which do
    not depend on the parameters, so the contrastive term adds no gradient.
    """
    acts = nn.forward_pass(spec, params, batch)
    ce, dlogits = nn.softmax_cross_entropy(acts[-1], batch.labels)
    z = acts[-2].mean(axis=0)
    z_g = nn.forward(spec, global_params, batch)[1].mean(axis=0)
    z_p = nn.forward(spec, prev_params, batch)[1].mean(axis=0)
    con, dz = moon_contrastive(z, z_g, z_p, tau)
    dhidden = None
    if spec.hidden_dims:
        dhidden = np.broadcast_to(mu * dz / batch.size, acts[-2].shape)
    grad = nn.backward_from_outputs(spec, params, batch, dlogits, dhidden=dhidden, acts=acts)
    if not np.isfinite(grad).all():
        raise DivergenceError("non-finite gradient in moon update")
    return ce, con, grad


def _sgd(w_start: np.ndarray, items, step_fn, eta: float, hp: Hyperparams,
         correction: np.ndarray | None = None):
    """Run SGD steps w <- w - eta * v over the item iterator.

    step_fn(w, item) returns (loss, grad) for the base objective; the
    scaffold correction, weight decay and momentum wrap around it here.
    Reported losses are the base data losses, without penalty terms.
    """
    w = np.array(w_start, dtype=np.float64, copy=True)
    velocity = None
    losses = []
    for item in items:
        loss, grad = step_fn(w, item)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at step {len(losses)}")
        if correction is not None:
            grad = grad + correction
        if hp.weight_decay:
            grad = grad + hp.weight_decay * w
        if hp.momentum:
            velocity = grad if velocity is None else hp.momentum * velocity + grad
            grad = velocity
        w = w - eta * grad
        losses.append(loss)
    return w, losses


def scaffold_new_variate(
    c_i: np.ndarray,
    c_global: np.ndarray,
    w_global: np.ndarray,
    w_new: np.ndarray,
    steps: int,
    eta: float,
) -> np.ndarray:
    """Post-update client variate c_i - c + (w_global - w_new) / (steps * eta)."""
    denom = steps * eta
    if denom > 0:
        drift = (w_global - w_new) / denom
    else:
        drift = np.zeros_like(w_global)
    return c_i - c_global + drift


def local_update(
    kind: str,
    spec: nn.ModelSpec,
    global_params: np.ndarray,
    stream: BatchStream,
    hp: Hyperparams,
    state: StrategyState | None,
    round_idx: int,
    steps_cap: int | None = None,
):
    """One device's local training pass starting from the global model.

    Runs hp.local_epochs epochs of the device's stream, capped at steps_cap
    steps. Momentum buffers start at zero every call. Returns a LocalUpdate;
    the caller is responsible for committing any state change it carries.
    """
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy {kind!r}")
    if kind in ("scaffold", "moon"):
        if state is None:
            raise ValueError(f"{kind} requires a StrategyState")
        if state.kind != kind:
            raise ValueError(f"state holds {state.kind!r}, not {kind!r}")
    if steps_cap is not None and steps_cap < 1:
        raise ValueError("steps_cap must be >= 1")
    global_params = np.asarray(global_params, dtype=np.float64)
    eta = hp.effective_lr(round_idx)
    limit = hp.local_epochs * stream.batches_per_epoch
    if steps_cap is not None:
        limit = min(limit, int(steps_cap))
    batches = itertools.islice(stream.batches(round_idx, hp.local_epochs), limit)

    correction = None
    c_i = None
    if kind == "scaffold":
        c_i = state.client_variate(stream.device)
        correction = state.c_global - c_i

    if kind == "fedprox":
        mu = hp.mu_prox

        def step_fn(w, batch):
            loss, grad = nn.loss_and_grad(spec, w, batch)
            return loss, grad + mu * (w - global_params)
    elif kind == "moon":
        prev = state.prev_model(stream.device, global_params)

        def step_fn(w, batch):
            ce, _, grad = moon_loss_and_grad(
                spec, w, batch, global_params, prev, hp.tau_moon, hp.mu_moon
            )
            return ce, grad
    else:

        def step_fn(w, batch):
            return nn.loss_and_grad(spec, w, batch)

    try:
        w_new, losses = _sgd(global_params, batches, step_fn, eta, hp, correction)
    except DivergenceError as exc:
        raise DivergenceError(f"device {stream.device}, round {round_idx}: {exc}") from exc

    new_variate = None
    if kind == "scaffold":
        new_variate = scaffold_new_variate(
            c_i, state.c_global, global_params, w_new, len(losses), eta
        )
    return LocalUpdate(
        params=w_new,
        steps=len(losses),
        mean_loss=float(np.mean(losses)),
        new_client_variate=new_variate,
    )


def quadratic_local_update(
    kind: str,
    workload: QuadraticWorkload,
    device: int,
    global_params: np.ndarray,
    hp: Hyperparams,
    state: StrategyState | None,
    round_idx: int,
    steps: int,
):
    """local_update analogue on a closed-form quadratic device objective.

    Each step is one full gradient step; moon has no representation here and
    is rejected.
    """
    if kind == "moon":
        raise ValueError("moon is undefined for quadratic workloads")
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy {kind!r}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    global_params = np.asarray(global_params, dtype=np.float64)
    eta = hp.effective_lr(round_idx)

    correction = None
    c_i = None
    if kind == "scaffold":
        if state is None or state.kind != "scaffold":
            raise ValueError("scaffold requires a scaffold StrategyState")
        c_i = state.client_variate(device)
        correction = state.c_global - c_i

    if kind == "fedprox":
        mu = hp.mu_prox

        def step_fn(w, _):
            return workload.loss(device, w), workload.grad(device, w) + mu * (w - global_params)
    else:

        def step_fn(w, _):
            return workload.loss(device, w), workload.grad(device, w)

    w_new, losses = _sgd(global_params, range(steps), step_fn, eta, hp, correction)
    new_variate = None
    if kind == "scaffold":
        new_variate = scaffold_new_variate(
            c_i, state.c_global, global_params, w_new, len(losses), eta
        )
    return LocalUpdate(
        params=w_new,
        steps=len(losses),
        mean_loss=float(np.mean(losses)),
        new_client_variate=new_variate,
    )


def apply_local_update(state: StrategyState | None, device: int, update: LocalUpdate) -> None:
    """Commit a client's state change. Call only between parallel sections."""
    if state is None:
        return
    if state.kind == "scaffold":
        state.c_client[device] = update.new_client_variate
    elif state.kind == "moon":
        state.prev_local[device] = update.params


def scaffold_server_update(
    state: StrategyState,
    participating,
    old_variates: dict,
    num_devices_total: int,
) -> None:
    """c_global += (|S| / m) * mean over S of (new c_i - old c_i)."""
    if state.kind != "scaffold":
        raise ValueError("state is not scaffold")
    participating = list(participating)
    if not participating:
        return
    delta = np.mean(
        [state.c_client[d] - old_variates[d] for d in participating], axis=0
    )
    state.c_global = state.c_global + (len(participating) / num_devices_total) * delta


def aggregate(contributions) -> np.ndarray:
    """Weighted element-wise mean of parameter vectors.

    contributions is a sequence of (params, weight); weights are
    normalized by their sum.
    """
    contributions = list(contributions)
    if not contributions:
        raise ValueError("nothing to aggregate")
    total = float(sum(w for _, w in contributions))
    if total <= 0:
        raise ValueError("total aggregation weight must be positive")
    first = np.asarray(contributions[0][0], dtype=np.float64)
    out = np.zeros_like(first)
    for params, weight in contributions:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != first.shape:
            raise ValueError("contribution shapes differ")
        out += (weight / total) * params
    return out
