"""Differentiable-array core: rasters, primitives, spectral norm and Adam."""

from qspace_dwi.diffcore import ops
from qspace_dwi.diffcore.array import (
    DiffArray,
    ParamSet,
    as_diff,
    evaluate_with_gradients,
)
from qspace_dwi.diffcore.ops import instance_norm
from qspace_dwi.diffcore.optim import AdamState, adam_step
from qspace_dwi.diffcore.spectral import (
    estimate_spectral_norm,
    init_state,
    spectral_normalize,
)

__all__ = [
    "AdamState",
    "DiffArray",
    "ParamSet",
    "adam_step",
    "as_diff",
    "estimate_spectral_norm",
    "evaluate_with_gradients",
    "init_state",
    "instance_norm",
    "ops",
    "spectral_normalize",
]
