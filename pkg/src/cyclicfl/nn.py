"""Flat-parameter MLP classifiers with analytic gradients.

A model is a ModelSpec plus one flat float64 vector holding, for each layer,
the weight matrix (fan_in x fan_out, row-major) followed by its bias. The
flat vector is the unit of transmission, aggregation and perturbation
everywhere else in the package, so every operation here is a pure function
of (spec, params, data) and is deterministic down to the bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .rng import substream

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Fully-connected classifier: input_dim -> hidden_dims ... -> output_dim.

    Zero, one or two hidden layers are supported. The final layer is always
    linear; hidden layers use the configured nonlinearity.
    """

    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.output_dim < 2:
            raise ValueError("output_dim must be >= 2")
        if len(self.hidden_dims) > 2:
            raise ValueError("at most two hidden layers are supported")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return int(sum((din + 1) * dout for din, dout in zip(dims, dims[1:])))


@dataclass(frozen=True)
class Batch:
    """A mini-batch: features [n, d] float64 and integer labels [n]."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise ValueError("labels must be 1-D and match the batch size")
        if feats.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]


def unpack_params(spec: ModelSpec, params: np.ndarray) -> list:
    """Split the flat vector into [(W, b)] views, one pair per layer."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"expected {spec.param_count} parameters, got shape {params.shape}"
        )
    layers = []
    off = 0
    dims = spec.layer_dims
    for din, dout in zip(dims, dims[1:]):
        w = params[off:off + din * dout].reshape(din, dout)
        off += din * dout
        b = params[off:off + dout]
        off += dout
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Gaussian fan-in scaled weights (variance 2/fan_in for relu, 1/fan_in
    for tanh), zero biases. Deterministic in (spec, seed)."""
    rng = substream(seed, "init")
    gain = 2.0 if spec.activation == "relu" else 1.0
    parts = []
    dims = spec.layer_dims
    for din, dout in zip(dims, dims[1:]):
        std = math.sqrt(gain / din)
        parts.append(rng.standard_normal((din, dout)).ravel() * std)
        parts.append(np.zeros(dout))
    return np.concatenate(parts)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad_from_output(a: np.ndarray, activation: str) -> np.ndarray:
    # relu output is positive exactly where the pre-activation was; tanh'
    # is recoverable from its output as 1 - a^2.
    if activation == "relu":
        return (a > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward_pass(spec: ModelSpec, params: np.ndarray, batch: Batch) -> list:
    """Return the list of per-layer activations [input, h1, ..., logits]."""
    if batch.features.shape[1] != spec.input_dim:
        raise ValueError(
            f"feature dim {batch.features.shape[1]} != input_dim {spec.input_dim}"
        )
    layers = unpack_params(spec, params)
    acts = [batch.features]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        acts.append(z if i == last else _activate(z, spec.activation))
    return acts


def forward(spec: ModelSpec, params: np.ndarray, batch: Batch):
    """Return (logits, hidden) where hidden is the last hidden-layer output.

    With no hidden layers the features themselves stand in for hidden.
    """
    acts = forward_pass(spec, params, batch)
    return acts[-1], acts[-2]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n, c = logits.shape
    if labels.max() >= c:
        raise ValueError("label out of range for logit width")
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward_from_outputs(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    dlogits: np.ndarray,
    dhidden: np.ndarray | None = None,
    acts: list | None = None,
) -> np.ndarray:
    """Backpropagate to a flat gradient from d(loss)/d(logits).

    An optional dhidden term is injected at the last hidden activation,
    which lets callers differentiate auxiliary losses defined on the
    representation. With no hidden layers dhidden has nowhere to attach and
    is ignored. Pass acts from forward_pass to avoid recomputing it.
    """
    layers = unpack_params(spec, params)
    if acts is None:
        acts = forward_pass(spec, params, batch)
    num = len(layers)
    grads_w = [None] * num
    grads_b = [None] * num
    delta = dlogits
    for i in range(num - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        da = delta @ layers[i][0].T
        if dhidden is not None and i == num - 1:
            da = da + dhidden
        delta = da * _activation_grad_from_output(acts[i], spec.activation)
    flat = []
    for gw, gb in zip(grads_w, grads_b):
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch):
    """Mean cross-entropy over the batch and its flat analytic gradient."""
    acts = forward_pass(spec, params, batch)
    loss, dlogits = softmax_cross_entropy(acts[-1], batch.labels)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss in forward pass")
    grad = backward_from_outputs(spec, params, batch, dlogits, acts=acts)
    if not np.isfinite(grad).all():
        raise DivergenceError("non-finite gradient in backward pass")
    return loss, grad


def mean_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy only (no gradient)."""
    acts = forward_pass(spec, params, batch)
    logits = acts[-1]
    if batch.labels.max() >= logits.shape[1]:
        raise ValueError("label out of range for logit width")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(batch.size), batch.labels].mean())
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss in forward pass")
    return loss


def fd_gradient(spec: ModelSpec, params: np.ndarray, batch: Batch, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the mean cross-entropy.

    Reference oracle for tests; O(param_count) forward passes, so keep the
    model small.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for j in range(params.size):
        bumped = params.copy()
        bumped[j] = params[j] + eps
        hi = mean_loss(spec, bumped, batch)
        bumped[j] = params[j] - eps
        lo = mean_loss(spec, bumped, batch)
        grad[j] = (hi - lo) / (2.0 * eps)
    return grad


def evaluate(spec: ModelSpec, params: np.ndarray, data):
    """Top-1 accuracy and mean loss over a dataset-like object.

    Ties in the argmax resolve to the lowest class index. `data` needs only
    .features and .labels attributes.
    """
    batch = Batch(data.features, data.labels)
    logits, _ = forward(spec, params, batch)
    if batch.labels.max() >= logits.shape[1]:
        raise ValueError("label out of range for logit width")
    pred = np.argmax(logits, axis=1)
    acc = float(np.mean(pred == batch.labels))
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(batch.size), batch.labels].mean())
    return acc, loss
