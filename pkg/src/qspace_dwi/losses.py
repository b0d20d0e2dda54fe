"""Training objectives: least-squares adversarial terms and the L1 translation term.

Pixel-branch terms use the mean over (u, v) rather than a sum, so the balance
between adversarial and L1 weights does not depend on slice size. Batch
expectations are arithmetic means over the minibatch.
"""

from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from qspace_dwi.diffcore import ops
from qspace_dwi.diffcore.array import DiffArray, as_diff
from qspace_dwi.exceptions import ShapeError
from qspace_dwi.models import LossWeights
from qspace_dwi.networks.discriminator import DiscriminatorOutput


def _half_mse(scores: DiffArray, target: float) -> DiffArray:
    return ops.mean(ops.square(scores - target)) * 0.5


def lsgan_d_loss(real_out: DiscriminatorOutput, fake_out: DiscriminatorOutput) -> DiffArray:
    """Discriminator loss summed over the encoder and decoder branches (real -> 1, fake -> 0)."""
    if real_out.pixel_scores.shape != fake_out.pixel_scores.shape:
        raise ShapeError(
            f"real/fake pixel maps differ: {real_out.pixel_scores.shape} "
            f"vs {fake_out.pixel_scores.shape}"
        )
    encoder = _half_mse(real_out.global_score, 1.0) + _half_mse(fake_out.global_score, 0.0)
    decoder = _half_mse(real_out.pixel_scores, 1.0) + _half_mse(fake_out.pixel_scores, 0.0)
    return encoder + decoder


def lsgan_g_loss(fake_out: DiscriminatorOutput) -> DiffArray:
    """Generator adversarial loss: push both branches' fake scores toward 1."""
    return _half_mse(fake_out.global_score, 1.0) + _half_mse(fake_out.pixel_scores, 1.0)


def l1_translation_loss(
    pred: DiffArray,
    target_dwi: ArrayLike,
    target_b0: ArrayLike,
    l: float | NDArray[np.floating[Any]],
) -> DiffArray:
    """Mean absolute error against the DWI target (l > 0) or the B0 target (l = 0).

    Args:
        pred: Predicted slices, [N, 1, H, W] or any shape matching the targets.
        target_dwi: DWI targets, same shape as pred.
        target_b0: B0 targets, same shape as pred.
        l: b-value (or normalized b-value) per sample, scalar or [N].

    Raises:
        ShapeError: If pred and the targets differ in shape.
    """
    pred = as_diff(pred)
    dwi = np.asarray(target_dwi, dtype=pred.dtype)
    b0 = np.asarray(target_b0, dtype=pred.dtype)
    if dwi.shape != pred.shape or b0.shape != pred.shape:
        raise ShapeError(f"l1: prediction {pred.shape} vs targets {dwi.shape} / {b0.shape}")
    weighted = np.asarray(l, dtype=np.float64)
    if weighted.ndim == 1:
        if weighted.shape[0] != pred.shape[0]:
            raise ShapeError(f"l1: {weighted.shape[0]} b-values for a batch of {pred.shape[0]}")
        weighted = weighted.reshape((-1,) + (1,) * (pred.ndim - 1))
    target = np.where(weighted > 0, dwi, b0)
    return ops.mean(ops.absolute(pred - target))


def total_generator_loss(
    adv: DiffArray | float, l1: DiffArray | float, w: LossWeights
) -> DiffArray:
    """lambda_gan * adv + lambda_l1 * l1."""
    return as_diff(adv) * w.lambda_gan + as_diff(l1) * w.lambda_l1
