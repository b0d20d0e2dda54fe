"""Tests for the qspace-dwi command-line interface.

Acceptance criteria:
- Unknown verbs and flags exit with 2; missing input files exit with 1
- evaluate of a volume against itself reports MAE 0, SSIM 1 and PSNR "inf"
- restore with the full table as the kept table reproduces the input
- animate writes one frame per step with the great-circle directions
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from qspace_dwi.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from qspace_dwi.phantom import PhantomSubject
from qspace_dwi.qspace import GradientTable, write_gradient_table
from qspace_dwi.training.checkpoint import save_checkpoint
from qspace_dwi.training.trainer import init_train_state
from qspace_dwi.volume import read_volume, to_ratio_stack, write_volume
from tests.conftest import tiny_train_config


def argv(verb: str, *switches: str, **flags: object) -> list[str]:
    """Build an argument list; keyword `from_dir` becomes `--from-dir`."""
    out = [verb]
    for name, value in flags.items():
        out += [f"--{name.replace('_', '-')}", str(value)]
    return out + [f"--{s}" for s in switches]


@pytest.fixture
def workspace(
    tmp_path: Path, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
) -> Path:
    """Ratio stack, structural volume, mask, gradient files and an untrained checkpoint."""
    subject = noiseless_subjects[0]
    write_volume(to_ratio_stack(subject.structural, subject.dwis), tmp_path / "ratios.qvol")
    write_volume(subject.structural, tmp_path / "structural.qvol")
    write_volume(subject.mask_volume(), tmp_path / "mask.qvol")
    write_gradient_table(small_table, tmp_path / "full.bvec", tmp_path / "full.bval")
    config = tiny_train_config()
    save_checkpoint(init_train_state(config).to_checkpoint(config, 2000.0), tmp_path / "g.qckpt")
    return tmp_path


class TestUsageErrors:
    """Test exit codes for malformed invocations."""

    def test_unknown_verb(self) -> None:
        """An unknown verb is a usage error."""
        assert run(["teleport"]) == EXIT_USAGE == 2

    def test_unknown_flag(self) -> None:
        """An unknown flag is a usage error."""
        assert run(argv("evaluate", "colour", pred="a", ref="b", json="c")) == EXIT_USAGE

    def test_bad_flag_value(self, workspace: Path) -> None:
        """Zero frames is rejected while parsing."""
        code = run(
            argv(
                "animate",
                ckpt=workspace / "g.qckpt",
                structural=workspace / "structural.qvol",
                from_dir="1,0,0",
                to_dir="0,1,0",
                bval=1000,
                frames=0,
                out=workspace / "frames",
            )
        )

        assert code == EXIT_USAGE

    def test_zero_direction(self, workspace: Path) -> None:
        """A zero direction cannot be normalized."""
        code = run(
            argv(
                "animate",
                ckpt=workspace / "g.qckpt",
                structural=workspace / "structural.qvol",
                from_dir="0,0,0",
                to_dir="0,1,0",
                bval=1000,
                frames=2,
                out=workspace / "frames",
            )
        )

        assert code == EXIT_USAGE

    def test_dti_without_table(self, workspace: Path) -> None:
        """--dti needs the gradient files."""
        ratios = workspace / "ratios.qvol"

        code = run(argv("evaluate", "dti", pred=ratios, ref=ratios, json=workspace / "r.json"))

        assert code == EXIT_USAGE

    def test_missing_file(self, tmp_path: Path) -> None:
        """A missing input file is a runtime error."""
        absent = tmp_path / "absent.qvol"

        code = run(argv("evaluate", pred=absent, ref=absent, json=tmp_path / "report.json"))

        assert code == EXIT_RUNTIME == 1

    def test_corrupt_volume(self, tmp_path: Path) -> None:
        """A file that is not a QVOL container is a runtime error."""
        junk = tmp_path / "junk.qvol"
        junk.write_bytes(b"not a volume")

        code = run(argv("evaluate", pred=junk, ref=junk, json=tmp_path / "r.json"))

        assert code == EXIT_RUNTIME

    def test_missing_checkpoint(self, workspace: Path) -> None:
        """A missing checkpoint exits with 1 and writes nothing."""
        out = workspace / "synth.qvol"

        code = run(
            argv(
                "synthesize",
                ckpt=workspace / "absent.qckpt",
                structural=workspace / "structural.qvol",
                bvec=workspace / "full.bvec",
                bval=workspace / "full.bval",
                out=out,
            )
        )

        assert code == EXIT_RUNTIME
        assert not out.exists()


class TestEvaluate:
    """Test the evaluate verb."""

    def test_self_comparison(self, workspace: Path) -> None:
        """A volume against itself: MAE 0, SSIM 1, PSNR "inf"."""
        ratios = workspace / "ratios.qvol"
        report_path = workspace / "out" / "report.json"

        code = run(
            argv(
                "evaluate",
                pred=ratios,
                ref=ratios,
                mask=workspace / "mask.qvol",
                json=report_path,
            )
        )

        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert code == EXIT_OK
        assert report["mae"] == 0.0
        assert report["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert report["psnr"] == "inf"

    def test_dti_maps(self, workspace: Path) -> None:
        """--dti adds FA/MD SSIM and writes the four maps next to the report."""
        ratios = workspace / "ratios.qvol"

        code = run(
            argv(
                "evaluate",
                "dti",
                pred=ratios,
                ref=ratios,
                mask=workspace / "mask.qvol",
                json=workspace / "dti.json",
                bvec=workspace / "full.bvec",
                bval=workspace / "full.bval",
            )
        )

        report = json.loads((workspace / "dti.json").read_text(encoding="utf-8"))
        assert code == EXIT_OK
        assert report["dti"]["fa_ssim"] == pytest.approx(1.0, abs=1e-9)
        assert report["dti"]["md_ssim"] == pytest.approx(1.0, abs=1e-9)
        for tag in ("fa", "md", "fa_ref", "md_ref"):
            assert (workspace / f"dti_{tag}.qvol").exists()
        assert read_volume(workspace / "dti_fa.qvol").channels == ("FA",)


class TestGeneration:
    """Test the verbs that run the generator."""

    def test_restore_without_removals(self, workspace: Path, small_table: GradientTable) -> None:
        """Kept table equal to the full table: output equals input, all entries real."""
        out = workspace / "restored.qvol"
        table = f"{workspace / 'full.bvec'},{workspace / 'full.bval'}"

        code = run(
            argv(
                "restore",
                ckpt=workspace / "g.qckpt",
                dwis=workspace / "ratios.qvol",
                kept_table=table,
                full_table=table,
                out=out,
            )
        )

        provenance = json.loads(out.with_suffix(".provenance.json").read_text(encoding="utf-8"))
        assert code == EXIT_OK
        assert read_volume(out).equals(read_volume(workspace / "ratios.qvol"))
        assert provenance == ["real"] * len(small_table)

    def test_restore_table_pair_format(self, workspace: Path) -> None:
        """--kept-table must be a BVEC,BVAL pair."""
        code = run(
            argv(
                "restore",
                ckpt=workspace / "g.qckpt",
                dwis=workspace / "ratios.qvol",
                kept_table=workspace / "full.bvec",
                full_table=workspace / "full.bvec",
                out=workspace / "restored.qvol",
            )
        )

        assert code == EXIT_USAGE

    def test_synthesize(self, workspace: Path, small_table: GradientTable) -> None:
        """One output channel per gradient entry."""
        out = workspace / "synth.qvol"

        code = run(
            argv(
                "synthesize",
                ckpt=workspace / "g.qckpt",
                structural=workspace / "structural.qvol",
                bvec=workspace / "full.bvec",
                bval=workspace / "full.bval",
                out=out,
            )
        )

        assert code == EXIT_OK
        assert read_volume(out).channels == tuple(f"DWI:{i}" for i in range(len(small_table)))

    def test_animate_three_frames(self, workspace: Path) -> None:
        """x to y in three frames passes through (1/sqrt2, 1/sqrt2, 0)."""
        out = workspace / "frames"

        code = run(
            argv(
                "animate",
                ckpt=workspace / "g.qckpt",
                structural=workspace / "structural.qvol",
                from_dir="1,0,0",
                to_dir="0,2,0",
                bval=1000,
                frames=3,
                out=out,
            )
        )

        listing = json.loads((out / "frames.json").read_text(encoding="utf-8"))
        assert code == EXIT_OK
        assert [f["file"] for f in listing] == [f"frame_{i:03d}.qvol" for i in range(3)]
        assert listing[1]["direction"] == pytest.approx([1 / math.sqrt(2), 1 / math.sqrt(2), 0])
        assert listing[2]["direction"] == pytest.approx([0.0, 1.0, 0.0])
        assert all(f["bvalue"] == 1000.0 for f in listing)
        assert all((out / f["file"]).exists() for f in listing)

    def test_bvalue_beyond_training_range(self, workspace: Path) -> None:
        """Synthesis above the checkpoint's max_bvalue is a runtime error."""
        code = run(
            argv(
                "animate",
                ckpt=workspace / "g.qckpt",
                structural=workspace / "structural.qvol",
                from_dir="1,0,0",
                to_dir="0,1,0",
                bval=5000,
                frames=1,
                out=workspace / "frames",
            )
        )

        assert code == EXIT_RUNTIME
