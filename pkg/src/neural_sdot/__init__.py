"""Semi-discrete optimal transport with a neural height representation.

The transport map from a continuous source to a set of weighted atoms is
the gradient of ``u(x) = max_i (x . y_i + h_i)``.  Heights come either from
Adam on the height vector directly or from a small network ``H(y)`` trained
on the atoms, which can then give heights for atoms added later without
further optimisation.
"""

__version__ = "0.1.0"

from .apps import Image, color_transfer, domain_adapt, domain_adapt_partial, mode_benchmark, read_ppm, write_ppm
from .core import (
    CellStats,
    DiscreteTarget,
    HeightVector,
    SourceSpec,
    assign_cells,
    eval_potential,
    project_zero_mean,
    transport_map,
)
from .errors import InvalidInputError, InvalidStateError, InvariantViolation
from .heightnet import AdamState, HeightNet, adam_step, load_checkpoint, net_backward, net_forward, save_checkpoint
from .solver import (
    TrainConfig,
    optimize_heights_direct,
    predict_heights,
    reuse_error_report,
    train_height_net,
)
from .synth import evaluate_modes, grid, make_da_dataset, ring, sample_mixture
from .volume import VolumeConfig, energy_gradient, estimate_volumes_batched, estimate_volumes_global

__all__ = [
    "AdamState",
    "CellStats",
    "DiscreteTarget",
    "HeightNet",
    "HeightVector",
    "Image",
    "InvalidInputError",
    "InvalidStateError",
    "InvariantViolation",
    "SourceSpec",
    "TrainConfig",
    "VolumeConfig",
    "adam_step",
    "assign_cells",
    "color_transfer",
    "domain_adapt",
    "domain_adapt_partial",
    "energy_gradient",
    "estimate_volumes_batched",
    "estimate_volumes_global",
    "eval_potential",
    "evaluate_modes",
    "grid",
    "load_checkpoint",
    "make_da_dataset",
    "mode_benchmark",
    "net_backward",
    "net_forward",
    "optimize_heights_direct",
    "predict_heights",
    "project_zero_mean",
    "read_ppm",
    "reuse_error_report",
    "ring",
    "sample_mixture",
    "save_checkpoint",
    "train_height_net",
    "transport_map",
    "write_ppm",
]
