"""Diffusion tensor fitting by weighted linear least squares.

The log-signal model is ln S = ln S0 - b g^T D g, linear in the seven
coefficients (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz). An ordinary least-squares
pass gives initial estimates; each reweight pass then solves the weighted
problem with weights equal to the squared predicted signals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import NDArray

from qspace_dwi.exceptions import FitError, GradientTableError
from qspace_dwi.qspace import GradientTable
from qspace_dwi.volume import VolumeStack

logger = logging.getLogger(__name__)

NUM_COEFFICIENTS = 7


@dataclass
class TensorFit:
    """Per-voxel tensor coefficients.

    Attributes:
        coefficients: [..., 7] as (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
        valid: [...] voxels inside the mask with positive signal everywhere.
    """

    coefficients: NDArray[np.float64]
    valid: NDArray[np.bool_]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.valid.shape


def design_matrix(table: GradientTable) -> NDArray[np.float64]:
    """Rows [1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz]."""
    g = table.directions()
    b = table.bvalues()
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    return np.column_stack(
        [
            np.ones(len(table)),
            -b * gx * gx,
            -b * gy * gy,
            -b * gz * gz,
            -2 * b * gx * gy,
            -2 * b * gx * gz,
            -2 * b * gy * gz,
        ]
    )


def _signals(dwis: VolumeStack | NDArray[Any]) -> NDArray[np.float64]:
    if isinstance(dwis, VolumeStack):
        names = dwis.dwi_names()
        return np.asarray(dwis.select(names).data if names else dwis.data, dtype=np.float64)
    return np.asarray(dwis, dtype=np.float64)


def dti_fit(
    dwis: VolumeStack | NDArray[Any],
    table: GradientTable,
    mask: NDArray[Any] | None = None,
    b0: NDArray[Any] | float | None = None,
    reweight_passes: int = 1,
) -> TensorFit:
    """Fit a diffusion tensor in every masked voxel.

    Args:
        dwis: DWI signals [N, Z, Y, X] (or a VolumeStack whose DWI channels are used).
        table: Gradient table, one entry per DWI channel.
        mask: Voxels to fit; all voxels when None.
        b0: Optional b=0 signal (raster or scalar) appended as an extra
            measurement; pass 1.0 for B0-ratio data.
        reweight_passes: Number of weighted passes after the OLS estimate.

    Returns:
        TensorFit over the spatial grid.

    Raises:
        GradientTableError: If the table length differs from the DWI count.
        FitError: If the design is rank deficient ("insufficient directions").
    """
    signals = _signals(dwis)
    if signals.shape[0] != len(table):
        raise GradientTableError(
            f"table/channel count mismatch: {len(table)} entries for {signals.shape[0]} DWIs"
        )
    if reweight_passes < 0:
        raise ValueError("reweight_passes must be non-negative")
    if not np.any(table.bvalues() > 0):
        raise FitError("insufficient directions: no diffusion-weighted entries")
    X = design_matrix(table)
    if b0 is not None:
        X = np.vstack([np.eye(1, NUM_COEFFICIENTS), X])
        signals = np.concatenate([np.broadcast_to(b0, signals.shape[1:])[np.newaxis], signals])
    rank = int(np.linalg.matrix_rank(X))
    if rank < NUM_COEFFICIENTS:
        raise FitError(f"insufficient directions: design rank {rank} < {NUM_COEFFICIENTS}")

    grid = signals.shape[1:]
    spatial = np.ones(grid, dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    if spatial.shape != grid:
        raise FitError(f"mask shape {spatial.shape} does not match signal grid {grid}")
    valid = spatial & np.all(signals > 0, axis=0)
    rejected = int(np.count_nonzero(spatial & ~valid))
    if rejected:
        logger.warning(f"{rejected} masked voxels have non-positive signal; marked invalid")

    coefficients = np.zeros((*grid, NUM_COEFFICIENTS))
    y = np.log(signals[:, valid])  # [N, V]
    if y.shape[1]:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]  # [7, V]
        for _ in range(reweight_passes):
            w = np.exp(2.0 * (X @ beta))
            lhs = np.einsum("nv,ni,nj->vij", w, X, X)
            rhs = np.einsum("nv,ni,nv->vi", w, X, y)
            beta = np.linalg.solve(lhs, rhs[..., np.newaxis])[..., 0].T
        coefficients[valid] = beta.T
    logger.info(f"Fitted tensors in {int(valid.sum())} voxels ({reweight_passes} reweight passes)")
    return TensorFit(coefficients=coefficients, valid=valid)


def tensor_matrix(fit: TensorFit) -> NDArray[np.float64]:
    """Symmetric [..., 3, 3] tensors from the fitted coefficients."""
    c = fit.coefficients
    dxx, dyy, dzz, dxy, dxz, dyz = (c[..., k] for k in range(1, 7))
    return np.stack(
        [
            np.stack([dxx, dxy, dxz], axis=-1),
            np.stack([dxy, dyy, dyz], axis=-1),
            np.stack([dxz, dyz, dzz], axis=-1),
        ],
        axis=-2,
    )


def fractional_anisotropy(eigenvalues: NDArray[Any]) -> NDArray[np.float64]:
    """FA from eigenvalues [..., 3]; negatives clamped to 0, result in [0, 1]."""
    ev = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    l1, l2, l3 = ev[..., 0], ev[..., 1], ev[..., 2]
    spread = 0.5 * ((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2)
    norm = l1 * l1 + l2 * l2 + l3 * l3
    fa = np.sqrt(np.divide(spread, norm, out=np.zeros_like(norm), where=norm > 0))
    return np.clip(fa, 0.0, 1.0)


def eigenvalues(fit: TensorFit) -> NDArray[np.float64]:
    return np.linalg.eigvalsh(tensor_matrix(fit))


def fa_map(fit: TensorFit) -> NDArray[np.float64]:
    """Fractional anisotropy per voxel; invalid voxels are 0."""
    return np.where(fit.valid, fractional_anisotropy(eigenvalues(fit)), 0.0)


def md_map(fit: TensorFit) -> NDArray[np.float64]:
    """Mean diffusivity (mean eigenvalue) per voxel; invalid voxels are 0."""
    return np.where(fit.valid, eigenvalues(fit).mean(axis=-1), 0.0)
