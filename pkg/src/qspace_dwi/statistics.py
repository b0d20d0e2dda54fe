"""Aggregation of per-subject metrics for benchmark reports.

Provides:
- Confidence intervals (Student t) for a metric across subjects
- Mean/std/CI summaries of MetricReport fields
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel
from scipy import stats

from qspace_dwi.models import MetricReport


class MetricSummary(BaseModel):
    """Mean, sample standard deviation and confidence interval of one metric."""

    n: int
    mean: float
    std: float
    ci_low: float
    ci_high: float
    confidence: float = 0.95

    def format(self, digits: int = 4) -> str:
        level = round(self.confidence * 100)
        interval = f"{self.ci_low:.{digits}f}..{self.ci_high:.{digits}f}"
        spread = f"{self.mean:.{digits}f} ± {self.std:.{digits}f}"
        return f"{spread} ({level}% CI {interval}, n={self.n})"


def calculate_confidence_interval(
    scores: Sequence[float], confidence: float = 0.95
) -> tuple[float, float]:
    """Confidence interval of the mean from the t-distribution.

    Args:
        scores: Per-subject values.
        confidence: Confidence level (default 0.95 for 95% CI).

    Returns:
        tuple[float, float]: (lower_bound, upper_bound)

    Raises:
        ValueError: If there are fewer than 2 scores or confidence is not in (0, 1).
    """
    if len(scores) < 2:
        raise ValueError("Need at least 2 scores to calculate confidence interval")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")

    values = np.asarray(scores, dtype=np.float64)
    n = len(values)
    mean = float(values.mean())
    std_error = float(values.std(ddof=1)) / math.sqrt(n)
    t_score = float(stats.t.ppf(0.5 + confidence / 2.0, df=n - 1))
    margin_of_error = t_score * std_error
    return (mean - margin_of_error, mean + margin_of_error)


def summarize_metric(values: Sequence[float], confidence: float = 0.95) -> MetricSummary:
    """Summarize one metric; a single value gets std 0 and a degenerate interval.

    Raises:
        ValueError: If `values` is empty.
    """
    if len(values) == 0:
        raise ValueError("cannot summarize an empty metric")
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if len(arr) == 1:
        return MetricSummary(
            n=1, mean=mean, std=0.0, ci_low=mean, ci_high=mean, confidence=confidence
        )
    low, high = calculate_confidence_interval(list(arr), confidence)
    return MetricSummary(
        n=len(arr),
        mean=mean,
        std=float(arr.std(ddof=1)),
        ci_low=low,
        ci_high=high,
        confidence=confidence,
    )


def summarize_reports(
    reports: Sequence[MetricReport], confidence: float = 0.95
) -> dict[str, MetricSummary]:
    """Per-field summaries (psnr, ssim, mae) across subjects.

    Infinite PSNR values (identical images) are left out of the PSNR summary.
    """
    if not reports:
        raise ValueError("no reports to summarize")
    summary = {
        "ssim": summarize_metric([r.ssim for r in reports], confidence),
        "mae": summarize_metric([r.mae for r in reports], confidence),
    }
    finite_psnr = [r.psnr for r in reports if math.isfinite(r.psnr)]
    if finite_psnr:
        summary["psnr"] = summarize_metric(finite_psnr, confidence)
    return summary
