"""Spectral normalization by power iteration.

The weight (reshaped to [out, in]) is divided by an estimate of its largest
singular value. The left singular vector estimate `u` is explicit state: the
caller passes it in and decides whether to keep the advanced vector that
comes back.
"""

from __future__ import annotations

import logging

import numpy as np

from qspace_dwi.diffcore import ops
from qspace_dwi.diffcore.array import DiffArray, FloatArray

logger = logging.getLogger(__name__)

_TINY = 1e-12


def init_state(out_features: int, rng: np.random.Generator) -> FloatArray:
    """Random unit vector used to seed the power iteration."""
    u = rng.standard_normal(out_features).astype(np.float32)
    return u / np.linalg.norm(u)


def estimate_spectral_norm(
    matrix: FloatArray, state_vector: FloatArray, power_iters: int = 1
) -> tuple[float, FloatArray, FloatArray]:
    """Power-iteration estimate of the largest singular value.

    Args:
        matrix: 2-D raster [out, in].
        state_vector: Current left-singular-vector estimate, length `out`.
        power_iters: Number of iterations (at least 1).

    Returns:
        (sigma, u, v) where sigma = u^T W v; sigma is 0.0 for a zero matrix.
    """
    if power_iters < 1:
        raise ValueError("power_iters must be at least 1")
    u = state_vector.astype(matrix.dtype)
    v = np.zeros(matrix.shape[1], dtype=matrix.dtype)
    for _ in range(power_iters):
        v = matrix.T @ u
        norm_v = float(np.linalg.norm(v))
        if norm_v < _TINY:
            return 0.0, u, v
        v = v / norm_v
        u = matrix @ v
        norm_u = float(np.linalg.norm(u))
        if norm_u < _TINY:
            return 0.0, state_vector.astype(matrix.dtype), v
        u = u / norm_u
    return float(u @ matrix @ v), u, v


def spectral_normalize(
    weight: DiffArray, state_vector: FloatArray, power_iters: int = 1
) -> tuple[DiffArray, FloatArray]:
    """Divide `weight` by its estimated spectral norm.

    The gradient treats the singular vectors as constants, so
    d(W / sigma)/dW includes the dependence of sigma = u^T W v on W.

    Args:
        weight: Weight of any rank; rows are the first axis.
        state_vector: Persisted estimate of the leading left singular vector.
        power_iters: Power iterations to run from `state_vector`.

    Returns:
        (normalized weight, advanced state vector). A zero matrix comes back
        unchanged with sigma clamped to 1.
    """
    out_features = weight.shape[0]
    matrix = weight.values.reshape(out_features, -1)
    sigma, u, v = estimate_spectral_norm(matrix, state_vector, power_iters)
    if sigma < _TINY:
        logger.warning(f"spectral norm of '{weight.name}' is zero; leaving weight unscaled")
        return weight, u.astype(np.float32)
    outer = np.outer(u, v).reshape(weight.shape).astype(weight.dtype)
    sigma_node = ops.sum_(weight * outer)
    return weight / sigma_node, u.astype(np.float32)
