"""Tests for cross-subject metric aggregation.

Acceptance criteria:
- 95% confidence intervals use the Student t distribution
- A single subject yields std 0 and a degenerate interval
- Infinite PSNR values are left out of the PSNR summary
"""

from __future__ import annotations

import math

import pytest

from qspace_dwi.models import MetricReport
from qspace_dwi.statistics import (
    MetricSummary,
    calculate_confidence_interval,
    summarize_metric,
    summarize_reports,
)


def _report(psnr: float, ssim: float, mae: float) -> MetricReport:
    return MetricReport(psnr=psnr, ssim=ssim, mae=mae, mask="all voxels")


class TestConfidenceInterval:
    """Test the t-based interval of the mean."""

    def test_known_values(self) -> None:
        """[1, 2, 3]: mean 2, s = 1, t(0.975, 2) = 4.3027, so 2 -/+ 2.4841."""
        low, high = calculate_confidence_interval([1.0, 2.0, 3.0])

        assert low == pytest.approx(2.0 - 2.484138, abs=1e-5)
        assert high == pytest.approx(2.0 + 2.484138, abs=1e-5)

    def test_brackets_mean(self) -> None:
        """The interval contains the sample mean."""
        scores = [0.85, 0.87, 0.84, 0.86, 0.88, 0.85, 0.87, 0.86]

        low, high = calculate_confidence_interval(scores, confidence=0.95)

        assert low < sum(scores) / len(scores) < high

    def test_higher_confidence_is_wider(self) -> None:
        """99% intervals are wider than 90% intervals."""
        scores = [0.1, 0.4, 0.35, 0.2, 0.3]

        narrow = calculate_confidence_interval(scores, confidence=0.90)
        wide = calculate_confidence_interval(scores, confidence=0.99)

        assert wide[1] - wide[0] > narrow[1] - narrow[0]

    def test_constant_scores(self) -> None:
        """Identical scores collapse the interval to a point."""
        assert calculate_confidence_interval([0.5, 0.5, 0.5]) == (0.5, 0.5)

    def test_too_few_scores(self) -> None:
        """At least two scores are needed."""
        with pytest.raises(ValueError, match="at least 2"):
            calculate_confidence_interval([1.0])

    def test_confidence_range(self) -> None:
        """Confidence must lie strictly between 0 and 1."""
        with pytest.raises(ValueError, match="confidence"):
            calculate_confidence_interval([1.0, 2.0], confidence=1.0)


class TestSummaries:
    """Test MetricSummary construction."""

    def test_single_value(self) -> None:
        """One subject: std 0, interval equal to the value."""
        summary = summarize_metric([0.9])

        assert summary == MetricSummary(n=1, mean=0.9, std=0.0, ci_low=0.9, ci_high=0.9)

    def test_sample_std(self) -> None:
        """The spread is the sample (ddof = 1) standard deviation."""
        summary = summarize_metric([1.0, 2.0, 3.0])

        assert summary.n == 3
        assert summary.mean == pytest.approx(2.0)
        assert summary.std == pytest.approx(1.0)

    def test_empty(self) -> None:
        """An empty metric cannot be summarized."""
        with pytest.raises(ValueError, match="empty"):
            summarize_metric([])

    def test_format(self) -> None:
        """The text form shows mean, std, interval and n."""
        summary = MetricSummary(n=3, mean=2.0, std=1.0, ci_low=-0.48, ci_high=4.48)

        assert summary.format(2) == "2.00 ± 1.00 (95% CI -0.48..4.48, n=3)"

    def test_reports_skip_infinite_psnr(self) -> None:
        """PSNR summaries only use finite values; SSIM and MAE use all reports."""
        reports = [_report(math.inf, 1.0, 0.0), _report(30.0, 0.9, 0.1), _report(32.0, 0.8, 0.2)]

        summary = summarize_reports(reports)

        assert summary["psnr"].n == 2
        assert summary["psnr"].mean == pytest.approx(31.0)
        assert summary["ssim"].n == 3
        assert summary["mae"].mean == pytest.approx(0.1)

    def test_reports_all_identical(self) -> None:
        """With only infinite PSNR there is no PSNR summary."""
        summary = summarize_reports([_report(math.inf, 1.0, 0.0)])

        assert "psnr" not in summary
        assert summary["ssim"].mean == 1.0

    def test_no_reports(self) -> None:
        """At least one report is required."""
        with pytest.raises(ValueError, match="no reports"):
            summarize_reports([])
