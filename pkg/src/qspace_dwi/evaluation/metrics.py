"""PSNR, SSIM and MAE over masked volumes.

Images are B0 ratios, so the dynamic range R defaults to the intensity cap
(settings.metric_data_range). SSIM uses a Gaussian window (sigma 1.5, 11
voxels wide) with K1 = 0.01, K2 = 0.03. The window is 3D when the volume has
at least as many slices as the window width, otherwise 2D per axial slice.
"""

from __future__ import annotations

import logging
import math
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import gaussian_filter

from qspace_dwi.exceptions import MetricError
from qspace_dwi.models import MetricReport
from qspace_dwi.settings import settings

logger = logging.getLogger(__name__)

K1 = 0.01
K2 = 0.03


def _as_channels(image: NDArray[Any]) -> NDArray[np.float64]:
    """Promote [Y, X] / [Z, Y, X] / [C, Z, Y, X] to [C, Z, Y, X] float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr[np.newaxis, np.newaxis]
    if arr.ndim == 3:
        return arr[np.newaxis]
    if arr.ndim == 4:
        return arr
    raise MetricError(f"expected a 2D, 3D or 4D image, got shape {arr.shape}")


def ssim_map(
    pred: NDArray[np.float64],
    ref: NDArray[np.float64],
    data_range: float,
    sigma: float | None = None,
    window: int | None = None,
) -> tuple[NDArray[np.float64], str]:
    """Local SSIM for [C, Z, Y, X] rasters; returns the map and the window mode."""
    sigma = settings.ssim_sigma if sigma is None else sigma
    window = settings.ssim_window if window is None else window
    radius = window // 2
    if pred.shape[1] >= window:
        sigmas: tuple[float, ...] = (0.0, sigma, sigma, sigma)
        mode = f"3D {window}^3 window"
    else:
        sigmas = (0.0, 0.0, sigma, sigma)
        mode = f"2D {window}x{window} window per slice (Z={pred.shape[1]} < {window})"

    def blur(x: NDArray[np.float64]) -> NDArray[np.float64]:
        return gaussian_filter(x, sigma=sigmas, truncate=radius / sigma)

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_p, mu_r = blur(pred), blur(ref)
    var_p = blur(pred * pred) - mu_p * mu_p
    var_r = blur(ref * ref) - mu_r * mu_r
    cov = blur(pred * ref) - mu_p * mu_r
    numerator = (2 * mu_p * mu_r + c1) * (2 * cov + c2)
    denominator = (mu_p * mu_p + mu_r * mu_r + c1) * (var_p + var_r + c2)
    return numerator / denominator, mode


def compute_metrics(
    pred: NDArray[Any],
    ref: NDArray[Any],
    mask: NDArray[Any] | None = None,
    data_range: float | None = None,
) -> MetricReport:
    """Compare a prediction with a reference inside a mask.

    Args:
        pred: Predicted image, [Y, X], [Z, Y, X] or [C, Z, Y, X].
        ref: Reference image of the same shape.
        mask: Spatial mask broadcast over channels (everything when None).
        data_range: Dynamic range R (settings.metric_data_range when None).

    Returns:
        MetricReport with PSNR = 10 log10(R^2 / MSE) (inf when MSE is 0),
        masked mean SSIM and masked MAE.

    Raises:
        MetricError: On shape mismatch, an empty mask or a non-positive range.
    """
    data_range = settings.metric_data_range if data_range is None else data_range
    if data_range <= 0:
        raise MetricError(f"data range must be positive, got {data_range}")
    p, r = _as_channels(pred), _as_channels(ref)
    if p.shape != r.shape:
        raise MetricError(f"shape mismatch: pred {np.shape(pred)} vs ref {np.shape(ref)}")
    if mask is None:
        spatial = np.ones(p.shape[1:], dtype=bool)
    else:
        spatial = np.asarray(mask).astype(bool)
        if spatial.ndim == 2:
            spatial = spatial[np.newaxis]
        if spatial.shape != p.shape[1:]:
            raise MetricError(
                f"mask shape {np.shape(mask)} does not match image grid {p.shape[1:]}"
            )
    count = int(spatial.sum())
    if count == 0:
        raise MetricError("mask is empty")
    full = np.broadcast_to(spatial, p.shape)

    diff = (p - r)[full]
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(data_range**2 / mse)

    local, mode = ssim_map(p, r, data_range)
    ssim = float(np.clip(np.mean(local[full]), -1.0, 1.0))

    channels = p.shape[0]
    where = f"{count} voxels" + (f" x {channels} channels" if channels > 1 else "")
    logger.debug(f"Metrics over {where}: psnr={psnr:.3f} ssim={ssim:.4f} mae={mae:.5f}")
    return MetricReport(
        psnr=psnr,
        ssim=ssim,
        mae=mae,
        mask=f"{where}; SSIM {mode}",
        notes=[f"data range {data_range:g}"],
    )
