"""Deterministic federated-learning simulator with cyclic pre-training.

A run has two phases. First, one live model is handed device to device
along a randomly sampled chain and trained sequentially with plain SGD (no
aggregation). Second, the warmed-up model seeds standard parallel federated
optimization (fedavg, fedprox, scaffold or moon) with weighted averaging.
The package also ships kernel-based data-consistency diagnostics,
closed-form communication accounting and loss-surface slicing, all bitwise
reproducible from a single seed.
"""

from .cyclic import CyclicConfig, cyclic_pretrain, comm_units_p1, random_sample
from .data import (
    BatchStream,
    Dataset,
    Partition,
    QuadraticWorkload,
    dirichlet_partition,
    holdout_split,
    load_csv,
    load_idx,
    synth_blobs,
    synth_quadratics,
)
from .errors import ConfigError, CyclicFLError, DataFormatError, DivergenceError
from .landscape import SliceSpec, model_slice, sharpness, slice_grid
from .nn import Batch, ModelSpec, evaluate, fd_gradient, forward, init_params, loss_and_grad
from .orchestrator import (
    ExperimentConfig,
    RoundLog,
    comm_units_total,
    grad_norm_probe,
    rounds_to_target,
    run_experiment,
    run_quadratic_experiment,
)
from .strategies import (
    Hyperparams,
    LocalUpdate,
    StrategyState,
    aggregate,
    local_update,
    moon_contrastive,
    scaffold_server_update,
)
from .theory import ConsistencyReport, GramInputs, consistency, consistency_from_partition, gram

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BatchStream",
    "ConfigError",
    "ConsistencyReport",
    "CyclicConfig",
    "CyclicFLError",
    "DataFormatError",
    "Dataset",
    "DivergenceError",
    "ExperimentConfig",
    "GramInputs",
    "Hyperparams",
    "LocalUpdate",
    "ModelSpec",
    "Partition",
    "QuadraticWorkload",
    "RoundLog",
    "SliceSpec",
    "StrategyState",
    "aggregate",
    "comm_units_p1",
    "comm_units_total",
    "consistency",
    "consistency_from_partition",
    "cyclic_pretrain",
    "dirichlet_partition",
    "evaluate",
    "fd_gradient",
    "forward",
    "grad_norm_probe",
    "gram",
    "holdout_split",
    "init_params",
    "load_csv",
    "load_idx",
    "local_update",
    "loss_and_grad",
    "model_slice",
    "moon_contrastive",
    "random_sample",
    "rounds_to_target",
    "run_experiment",
    "run_quadratic_experiment",
    "scaffold_server_update",
    "sharpness",
    "slice_grid",
    "synth_blobs",
    "synth_quadratics",
    "__version__",
]
