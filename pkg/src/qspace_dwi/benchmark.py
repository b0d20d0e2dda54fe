"""Phantom-scale synthesis and restoration benchmark.

For each held-out subject:
- Synthesis: every DWI of the full table is synthesized from the structural
  inputs and compared with the acquired ratio images, next to the copy-B0
  baseline (ratio 1 wherever B0 is above the floor).
- Restoration sweep: for each downsampling factor r the table is
  downsampled, the removed DWIs are synthesized, and FA maps fitted on the
  downsampled and restored sets are compared (SSIM) with the FA of the full
  acquisition.

Results are aggregated across subjects (mean, std, 95% CI).

Usage:
    python -m qspace_dwi.benchmark --ckpt model.qckpt --data phantom/ --out report.json
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field

from qspace_dwi.diffcore.array import ParamSet
from qspace_dwi.evaluation.dti import dti_fit, fa_map
from qspace_dwi.evaluation.metrics import compute_metrics
from qspace_dwi.evaluation.restore import Synthesizer, restore_qspace, select_entries
from qspace_dwi.exceptions import FitError
from qspace_dwi.models import GeneratorConfig, MetricReport
from qspace_dwi.phantom import StoredSubject, read_phantom_dataset
from qspace_dwi.qspace import GradientTable, downsample, retained_count
from qspace_dwi.statistics import MetricSummary, summarize_metric, summarize_reports
from qspace_dwi.training.checkpoint import load_generator

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.3, 0.5, 0.7, 0.9, 0.95)

# FA lies in [0, 1]
FA_DATA_RANGE = 1.0


class SynthesisResult(BaseModel):
    """Synthesized DWIs vs acquisition for one subject."""

    subject: int
    model: MetricReport
    baseline: MetricReport


class RestorationResult(BaseModel):
    """FA agreement with the full acquisition at one downsampling factor."""

    subject: int
    r: float
    kept: int
    total: int
    ssim_downsampled: float | None = None
    ssim_restored: float
    notes: list[str] = Field(default_factory=list)


class RestorationSummary(BaseModel):
    r: float
    kept: int
    total: int
    downsampled: MetricSummary | None = None
    restored: MetricSummary


class BenchmarkReport(BaseModel):
    """Aggregated synthesis and restoration results."""

    subjects: list[int]
    synthesis: list[SynthesisResult]
    synthesis_summary: dict[str, MetricSummary]
    baseline_summary: dict[str, MetricSummary]
    restoration: list[RestorationResult]
    restoration_summary: list[RestorationSummary]

    def to_summary(self) -> str:
        """Generate a human-readable summary of the report."""
        lines = [
            "=" * 60,
            "Q-SPACE SYNTHESIS BENCHMARK",
            "=" * 60,
            f"Held-out subjects: {', '.join(str(s) for s in self.subjects)}",
            "",
            "SYNTHESIS (model vs copy-B0 baseline)",
            "-" * 30,
        ]
        for name in ("psnr", "ssim", "mae"):
            model = self.synthesis_summary.get(name)
            baseline = self.baseline_summary.get(name)
            if model is None or baseline is None:
                continue
            lines.append(f"{name.upper():5} model:    {model.format()}")
            lines.append(f"{'':5} baseline: {baseline.format()}")

        lines.extend(["", "RESTORATION (SSIM of FA vs full acquisition)", "-" * 30])
        for point in self.restoration_summary:
            down = point.downsampled.format() if point.downsampled else "fit failed"
            lines.append(f"r={point.r:<5} kept {point.kept}/{point.total}")
            lines.append(f"  downsampled: {down}")
            lines.append(f"  restored:    {point.restored.format()}")

        lines.append("")
        lines.append("=" * 60)
        return "\n".join(lines)


def _fa(
    ratios: NDArray[np.float32], table: GradientTable, mask: NDArray[np.bool_]
) -> NDArray[np.float64]:
    return fa_map(dti_fit(ratios, table, mask=mask, b0=1.0))


class BenchmarkRunner:
    """Runs the benchmark for a trained generator."""

    def __init__(self, g_params: ParamSet, config: GeneratorConfig, max_bvalue: float) -> None:
        self.g_params = g_params
        self.config = config
        self.max_bvalue = max_bvalue

    def evaluate_synthesis(self, subject: StoredSubject, table: GradientTable) -> SynthesisResult:
        mask = subject.mask.data[0] > 0.5
        acquired = subject.ratios.select(subject.ratios.dwi_names()).data
        synthesizer = Synthesizer(subject.structural, self.g_params, self.config, self.max_bvalue)
        predicted = synthesizer.volume(table).data
        copy_b0 = np.broadcast_to(synthesizer.support.astype(np.float32), acquired.shape)
        return SynthesisResult(
            subject=subject.index,
            model=compute_metrics(predicted, acquired, mask),
            baseline=compute_metrics(copy_b0, acquired, mask),
        )

    def evaluate_restoration(
        self,
        subject: StoredSubject,
        table: GradientTable,
        r: float,
        seed: int,
        full_fa: NDArray[np.float64] | None = None,
    ) -> RestorationResult:
        mask = subject.mask.data[0] > 0.5
        full = subject.ratios
        if full_fa is None:
            full_fa = _fa(full.select(full.dwi_names()).data, table, mask)
        kept_table, _ = downsample(table, r, seed)
        kept = select_entries(full, table, kept_table)
        notes: list[str] = []

        ssim_downsampled: float | None = None
        try:
            down_fa = _fa(kept.select(kept.dwi_names()).data, kept_table, mask)
            ssim_downsampled = compute_metrics(down_fa, full_fa, mask, FA_DATA_RANGE).ssim
        except FitError as e:
            notes.append(f"downsampled fit failed: {e}")

        restored, _ = restore_qspace(
            kept, kept_table, table, self.g_params, self.config, self.max_bvalue, subject.structural
        )
        restored_fa = _fa(restored.select(restored.dwi_names()).data, table, mask)
        return RestorationResult(
            subject=subject.index,
            r=r,
            kept=len(kept_table),
            total=len(table),
            ssim_downsampled=ssim_downsampled,
            ssim_restored=compute_metrics(restored_fa, full_fa, mask, FA_DATA_RANGE).ssim,
            notes=notes,
        )

    def run(
        self,
        subjects: Sequence[StoredSubject],
        table: GradientTable,
        ratios: Sequence[float] = DEFAULT_RATIOS,
        seed: int = 0,
    ) -> BenchmarkReport:
        """Evaluate every subject and aggregate.

        Raises:
            ValueError: If there are no subjects.
        """
        if not subjects:
            raise ValueError("no subjects to benchmark")
        synthesis: list[SynthesisResult] = []
        restoration: list[RestorationResult] = []
        for subject in subjects:
            logger.info(f"Benchmarking subject {subject.index}")
            synthesis.append(self.evaluate_synthesis(subject, table))
            mask = subject.mask.data[0] > 0.5
            full = subject.ratios
            full_fa = _fa(full.select(full.dwi_names()).data, table, mask)
            for r in ratios:
                restoration.append(self.evaluate_restoration(subject, table, r, seed, full_fa))

        summaries: list[RestorationSummary] = []
        for r in ratios:
            points = [p for p in restoration if p.r == r]
            downs = [p.ssim_downsampled for p in points if p.ssim_downsampled is not None]
            summaries.append(
                RestorationSummary(
                    r=r,
                    kept=retained_count(len(table), r),
                    total=len(table),
                    downsampled=summarize_metric(downs) if downs else None,
                    restored=summarize_metric([p.ssim_restored for p in points]),
                )
            )
        return BenchmarkReport(
            subjects=[s.index for s in subjects],
            synthesis=synthesis,
            synthesis_summary=summarize_reports([s.model for s in synthesis]),
            baseline_summary=summarize_reports([s.baseline for s in synthesis]),
            restoration=restoration,
            restoration_summary=summaries,
        )


def main(argv: Sequence[str] | None = None) -> None:
    """Run the benchmark from the command line."""
    parser = argparse.ArgumentParser(
        prog="qspace_dwi.benchmark",
        description="Phantom-scale synthesis and restoration benchmark.",
    )
    parser.add_argument("--ckpt", type=Path, required=True, help="trained QCKPT001 checkpoint")
    parser.add_argument("--data", type=Path, required=True, help="simulated dataset directory")
    parser.add_argument("--split", default="test", choices=("train", "val", "test"))
    parser.add_argument("--ratios", default=",".join(str(r) for r in DEFAULT_RATIOS))
    parser.add_argument("--seed", type=int, default=0, help="downsampling seed")
    parser.add_argument("--out", type=Path, help="write the JSON report here")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO)

    g_params, config, max_bvalue = load_generator(args.ckpt)
    subjects, table = read_phantom_dataset(args.data, split=args.split)
    print(f"Loaded {len(subjects)} {args.split} subjects with {len(table)} gradients")

    runner = BenchmarkRunner(g_params, config, max_bvalue)
    report = runner.run(subjects, table, [float(r) for r in args.ratios.split(",")], args.seed)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    print(report.to_summary())


if __name__ == "__main__":
    main()
