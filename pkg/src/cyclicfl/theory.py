"""Infinite-width kernel diagnostics for data consistency.

The kernel of a one-hidden-layer ReLU network in the infinite-width limit,
on unit-normalized inputs, has the closed form

    k(x, x') = <x, x'> * (pi - arccos(<x, x'>)) / (2 * pi).

Given labeled probes P and Q, kernel regression on P is transferred to Q
and compared against Q's own labels; a small squared discrepancy means the
two sample sets describe consistent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import Dataset, Partition
from .rng import substream


def _unit_rows(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError(f"{name} contains a zero-norm row")
    return x / norms


def gram(x_a: np.ndarray, x_b: np.ndarray) -> np.ndarray:
    """Kernel matrix between the rows of x_a and x_b.

    Rows are unit-normalized first and inner products clamped to [-1, 1]
    before the arccos. Entries lie in [-1/(2*pi), 1/2]; gram(X, X) is
    symmetric positive semidefinite.
    """
    a = _unit_rows(x_a, "x_a")
    b = _unit_rows(x_b, "x_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("row dimensions differ")
    dots = np.clip(a @ b.T, -1.0, 1.0)
    return dots * (np.pi - np.arccos(dots)) / (2.0 * np.pi)


@dataclass(frozen=True)
class GramInputs:
    """Two labeled probe sets over a shared feature space."""

    x_p: np.ndarray
    y_p: np.ndarray
    x_q: np.ndarray
    y_q: np.ndarray

    def __post_init__(self):
        x_p = np.asarray(self.x_p, dtype=np.float64)
        x_q = np.asarray(self.x_q, dtype=np.float64)
        y_p = np.asarray(self.y_p, dtype=np.float64)
        y_q = np.asarray(self.y_q, dtype=np.float64)
        if x_p.ndim != 2 or x_q.ndim != 2 or x_p.shape[1] != x_q.shape[1]:
            raise ValueError("probe sets must be 2-D with a shared feature dim")
        if y_p.shape != (x_p.shape[0],) or y_q.shape != (x_q.shape[0],):
            raise ValueError("labels must be 1-D, one per probe row")
        object.__setattr__(self, "x_p", x_p)
        object.__setattr__(self, "x_q", x_q)
        object.__setattr__(self, "y_p", y_p)
        object.__setattr__(self, "y_q", y_q)


@dataclass(frozen=True)
class ConsistencyReport:
    """Kernel matrices plus the transfer diagnostic.

    lambda_p is the smallest eigenvalue of h_p before the ridge is added;
    discrepancy is || y_q - y_transfer ||^2.
    """

    h_p: np.ndarray
    h_q: np.ndarray
    h_pq: np.ndarray
    lambda_p: float
    y_transfer: np.ndarray
    discrepancy: float
    n_p: int
    n_q: int
    positive_class: int | None = None


def consistency(inputs: GramInputs, ridge: float = 1e-8) -> ConsistencyReport:
    """Kernel-regression transfer from P to Q.

    y_transfer = h_pq^T (h_p + ridge I)^{-1} y_p, solved through a Cholesky
    factorization of the ridged Gram matrix.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    h_p = gram(inputs.x_p, inputs.x_p)
    h_q = gram(inputs.x_q, inputs.x_q)
    h_pq = gram(inputs.x_p, inputs.x_q)
    lambda_p = float(np.linalg.eigvalsh(h_p)[0])
    ridged = h_p + ridge * np.eye(h_p.shape[0])
    try:
        factor = cho_factor(ridged)
    except LinAlgError as exc:
        raise ValueError(
            f"gram matrix is numerically singular (lambda_p={lambda_p:.3e});"
            " increase ridge"
        ) from exc
    solved = cho_solve(factor, inputs.y_p)
    y_transfer = h_pq.T @ solved
    discrepancy = float(np.sum((inputs.y_q - y_transfer) ** 2))
    return ConsistencyReport(
        h_p=h_p,
        h_q=h_q,
        h_pq=h_pq,
        lambda_p=lambda_p,
        y_transfer=y_transfer,
        discrepancy=discrepancy,
        n_p=inputs.x_p.shape[0],
        n_q=inputs.x_q.shape[0],
    )


def consistency_from_partition(
    dataset: Dataset,
    partition: Partition,
    chain_devices,
    probe_size: int,
    seed: int,
    ridge: float = 1e-8,
    positive_class: int = 0,
) -> ConsistencyReport:
    """Transfer diagnostic between chain-device data and a held-out probe.

    P subsamples the union of the given devices' samples; Q subsamples the
    rest of the dataset. Labels become +1 for positive_class, -1 otherwise
    (one-vs-rest; with two classes this is just the class-1 indicator).
    """
    if probe_size < 1:
        raise ValueError("probe_size must be >= 1")
    if not 0 <= positive_class < dataset.num_classes:
        raise ValueError("positive_class out of range")
    devices = sorted({int(d) for d in chain_devices})
    if not devices:
        raise ValueError("no chain devices given")
    for d in devices:
        if not 0 <= d < partition.num_devices:
            raise ValueError(f"device {d} out of range")
    pool = np.unique(np.concatenate([partition.assignments[d] for d in devices]))
    rng = substream(seed, "consistency")
    n_p = min(probe_size, pool.size)
    p_idx = np.sort(rng.choice(pool, size=n_p, replace=False))
    rest = np.setdiff1d(np.arange(dataset.size), p_idx)
    if rest.size == 0:
        raise ValueError("no samples left for the held-out probe")
    n_q = min(probe_size, rest.size)
    q_idx = np.sort(rng.choice(rest, size=n_q, replace=False))

    def signed(labels: np.ndarray) -> np.ndarray:
        if dataset.num_classes == 2:
            return np.where(labels == 1, 1.0, -1.0)
        return np.where(labels == positive_class, 1.0, -1.0)

    inputs = GramInputs(
        x_p=dataset.features[p_idx],
        y_p=signed(dataset.labels[p_idx]),
        x_q=dataset.features[q_idx],
        y_q=signed(dataset.labels[q_idx]),
    )
    report = consistency(inputs, ridge)
    return ConsistencyReport(
        h_p=report.h_p,
        h_q=report.h_q,
        h_pq=report.h_pq,
        lambda_p=report.lambda_p,
        y_transfer=report.y_transfer,
        discrepancy=report.discrepancy,
        n_p=report.n_p,
        n_q=report.n_q,
        positive_class=None if dataset.num_classes == 2 else positive_class,
    )
