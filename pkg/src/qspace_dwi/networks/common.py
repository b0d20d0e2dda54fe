"""Helpers shared by the generator and discriminator."""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.typing import NDArray

from qspace_dwi.exceptions import ShapeError
from qspace_dwi.models import CONDITION_DIM
from qspace_dwi.qspace import ConditionVector

ConditionInput = ConditionVector | Sequence[ConditionVector] | NDArray[np.floating[Any]]


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> NDArray[np.float32]:
    """Gaussian init with std sqrt(2 / fan_in) for leaky-rectifier layers."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def condition_matrix(b: ConditionInput, batch_size: int) -> NDArray[np.float32]:
    """Stack conditions into a [batch_size, 4] raster.

    A single ConditionVector (or a [4] array) is broadcast to the whole batch.

    Raises:
        ShapeError: If the number of conditions does not match the batch.
    """
    if isinstance(b, ConditionVector):
        rows = b.as_array()[np.newaxis]
    elif isinstance(b, np.ndarray):
        rows = np.atleast_2d(b)
    else:
        rows = np.stack([c.as_array() for c in b])
    if rows.ndim != 2 or rows.shape[1] != CONDITION_DIM:
        raise ShapeError(f"conditions must be [N, {CONDITION_DIM}], got {rows.shape}")
    if rows.shape[0] == 1 and batch_size > 1:
        rows = np.repeat(rows, batch_size, axis=0)
    if rows.shape[0] != batch_size:
        raise ShapeError(f"{rows.shape[0]} conditions for a batch of {batch_size}")
    return rows.astype(np.float32, copy=False)


def check_spatial(shape: tuple[int, ...], levels: int, who: str) -> None:
    """Require [N, C, H, W] with H and W divisible by 2**levels."""
    if len(shape) != 4:
        raise ShapeError(f"{who}: expected [N, C, H, W], got {shape}")
    factor = 2**levels
    if shape[2] % factor or shape[3] % factor:
        raise ShapeError(f"{who}: spatial dims {shape[2:]} not divisible by {factor}")
