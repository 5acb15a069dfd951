"""Two-direction loss-surface slices around a parameter vector.

A slice evaluates loss(params + a*d1 + b*d2) on a square grid of (a, b)
offsets, with d1, d2 drawn Gaussian and optionally norm-matched per
parameter block so perturbations scale with the weights they disturb. The
grid is exported as delimited text; rendering is left to external tools.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DivergenceError
from .ioutil import atomic_write_text, fmt_float
from .rng import substream

_NORMALIZATIONS = ("layerwise", "none")


@dataclass(frozen=True)
class SliceSpec:
    """Grid geometry and direction seeding for one slice.

    resolution must be odd so the exact center (a=0, b=0) is a grid point;
    offsets cover [-span, span] in each axis.
    """

    resolution: int = 41
    span: float = 1.0
    normalization: str = "layerwise"
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError("resolution must be odd and >= 3")
        if self.span <= 0:
            raise ValueError("span must be positive")
        if self.normalization not in _NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")


def offsets(slice_spec: SliceSpec) -> np.ndarray:
    """Grid coordinates; the middle entry is exactly 0.0."""
    half = slice_spec.resolution // 2
    return (np.arange(slice_spec.resolution) - half) * (slice_spec.span / half)


def layer_blocks(spec: nn.ModelSpec) -> list:
    """(start, stop) segments of the flat vector, one per layer."""
    blocks = []
    off = 0
    dims = spec.layer_dims
    for din, dout in zip(dims, dims[1:]):
        size = (din + 1) * dout
        blocks.append((off, off + size))
        off += size
    return blocks


def directions(params: np.ndarray, slice_spec: SliceSpec, blocks=None):
    """Two Gaussian directions, norm-matched per block when requested.

    blocks is a list of (start, stop) pairs partitioning the parameter
    vector; under layerwise normalization each direction block is rescaled
    to the norm of the corresponding parameter block (a zero-norm parameter
    block zeroes the direction there). Without blocks the whole vector is
    one block.
    """
    params = np.asarray(params, dtype=np.float64)
    rng = substream(slice_spec.seed, "slice")
    d1 = rng.standard_normal(params.size)
    d2 = rng.standard_normal(params.size)
    if slice_spec.normalization == "layerwise":
        if blocks is None:
            blocks = [(0, params.size)]
        for d in (d1, d2):
            for start, stop in blocks:
                p_norm = np.linalg.norm(params[start:stop])
                d_norm = np.linalg.norm(d[start:stop])
                scale = (p_norm / d_norm) if d_norm > 0 else 0.0
                d[start:stop] *= scale
    return d1, d2


def slice_grid(loss_fn, params: np.ndarray, slice_spec: SliceSpec, blocks=None) -> np.ndarray:
    """Evaluate loss_fn over the offset grid; non-finite losses become +inf.

    Row i, column j holds loss_fn(params + offs[i]*d1 + offs[j]*d2). The
    center cell sees the parameters unperturbed.
    """
    params = np.asarray(params, dtype=np.float64)
    d1, d2 = directions(params, slice_spec, blocks)
    offs = offsets(slice_spec)
    grid = np.empty((offs.size, offs.size))
    for i, a in enumerate(offs):
        for j, b in enumerate(offs):
            point = params + a * d1 + b * d2
            try:
                value = float(loss_fn(point))
            except DivergenceError:
                value = float("inf")
            grid[i, j] = value if np.isfinite(value) else float("inf")
    return grid


def model_slice(
    spec: nn.ModelSpec, params: np.ndarray, probe_set, slice_spec: SliceSpec
) -> np.ndarray:
    """Loss surface of a classifier on a fixed probe batch.

    Blocks for layerwise normalization are the per-layer weights-plus-bias
    segments of the flat vector.
    """
    batch = nn.Batch(probe_set.features, probe_set.labels)
    return slice_grid(
        lambda w: nn.mean_loss(spec, w, batch), params, slice_spec, layer_blocks(spec)
    )


def sharpness(grid: np.ndarray) -> float:
    """Mean loss rise from the center to the outermost grid ring.

    Zero for a constant grid, non-negative when the center is a local
    minimum over the slice, and doubles when the grid values double.
    """
    grid = np.asarray(grid, dtype=np.float64)
    n = grid.shape[0]
    if grid.ndim != 2 or grid.shape != (n, n) or n < 3 or n % 2 == 0:
        raise ValueError("grid must be square with odd size >= 3")
    center = grid[n // 2, n // 2]
    ring = np.ones((n, n), dtype=bool)
    ring[1:-1, 1:-1] = False
    return float(np.mean(grid[ring] - center))


def write_grid_csv(path: str, grid: np.ndarray, slice_spec: SliceSpec) -> None:
    """Write rows a,b,loss in row-major grid order with full precision."""
    offs = offsets(slice_spec)
    if grid.shape != (offs.size, offs.size):
        raise ValueError("grid does not match the slice resolution")
    lines = ["a,b,loss"]
    for i, a in enumerate(offs):
        for j, b in enumerate(offs):
            lines.append(f"{fmt_float(a)},{fmt_float(b)},{fmt_float(grid[i, j])}")
    atomic_write_text(path, "\n".join(lines) + "\n")
