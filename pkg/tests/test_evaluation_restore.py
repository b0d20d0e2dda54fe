"""Tests for synthesis, q-space restoration and gradient-interpolation frames.

Acceptance criteria:
- Restoration at r = 0 returns the acquisition unchanged, every entry real
- Restoration at r > 0 synthesizes exactly N - k entries
- Acquired channels are copied bit for bit into the full-table positions
- A kept entry absent from the full table is a restoration error
- Interpolation paths start and end at the given directions
- Animation frames equal direct synthesis for the same gradient
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from qspace_dwi.diffcore.array import ParamSet
from qspace_dwi.evaluation.restore import (
    Synthesizer,
    animate_frames,
    interpolation_path,
    restore_qspace,
    select_entries,
    synthesize_volume,
)
from qspace_dwi.exceptions import GradientTableError, RestorationError
from qspace_dwi.networks import init_generator
from qspace_dwi.phantom import PhantomSubject
from qspace_dwi.qspace import (
    BVector,
    GradientEntry,
    GradientTable,
    downsample,
    retained_count,
)
from qspace_dwi.volume import VolumeStack, to_ratio_stack
from tests.conftest import TINY_GENERATOR


@pytest.fixture(scope="module")
def g_params() -> ParamSet:
    return init_generator(TINY_GENERATOR, np.random.default_rng(5))


@pytest.fixture
def subject(noiseless_subjects: list[PhantomSubject]) -> PhantomSubject:
    return noiseless_subjects[0]


@pytest.fixture
def ratios(subject: PhantomSubject) -> VolumeStack:
    return to_ratio_stack(subject.structural, subject.dwis)


class TestSynthesis:
    """Test slice-wise generator synthesis."""

    def test_one_channel_per_entry(
        self, subject: PhantomSubject, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """Synthesis yields DWI:0..N-1 over the subject grid."""
        out = synthesize_volume(subject.structural, small_table, g_params, TINY_GENERATOR, 2000.0)

        assert out.channels == tuple(f"DWI:{i}" for i in range(len(small_table)))
        assert out.data.shape[1:] == subject.structural.data.shape[1:]

    def test_zero_outside_b0_support(
        self, subject: PhantomSubject, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """Voxels without B0 signal are 0; values stay within [0, cap]."""
        synthesizer = Synthesizer(subject.structural, g_params, TINY_GENERATOR, 2000.0)

        out = synthesizer.slices(small_table.entries[0])

        assert not out[~synthesizer.support].any()
        assert out.min() >= 0.0
        assert out.max() <= TINY_GENERATOR.intensity_cap

    def test_odd_grid_is_padded(self, g_params: ParamSet, small_table: GradientTable) -> None:
        """Grids not divisible by 2**depth are padded and cropped back."""
        data = np.ones((3, 2, 10, 14), dtype=np.float32)
        structural = VolumeStack(channels=("B0", "T2", "T1"), data=data)
        single = small_table.subset([0])

        out = synthesize_volume(structural, single, g_params, TINY_GENERATOR, 2000.0)

        assert out.data.shape == (1, 2, 10, 14)

    def test_bvalue_above_training_maximum(
        self, subject: PhantomSubject, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """Synthesis refuses b-values beyond the training normalization."""
        with pytest.raises(GradientTableError, match="out-of-range"):
            synthesize_volume(subject.structural, small_table, g_params, TINY_GENERATOR, 1000.0)


class TestRestoreQspace:
    """Test completion of downsampled acquisitions."""

    def test_r_zero_is_identity(
        self, ratios: VolumeStack, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """Keeping everything returns the input with every entry real."""
        kept_table, _ = downsample(small_table, 0.0, seed=0)

        restored, provenance = restore_qspace(
            ratios, kept_table, small_table, g_params, TINY_GENERATOR, 2000.0
        )

        assert restored.equals(ratios)
        assert provenance == ["real"] * len(small_table)

    def test_synthesizes_removed_entries(
        self, ratios: VolumeStack, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """N = 12 at r = 0.75 keeps 3 and synthesizes 9; kept channels are exact copies."""
        kept_table, removed_table = downsample(small_table, 0.75, seed=2)
        kept = select_entries(ratios, small_table, kept_table)

        restored, provenance = restore_qspace(
            kept, kept_table, small_table, g_params, TINY_GENERATOR, 2000.0
        )

        assert retained_count(12, 0.75) == 3
        assert provenance.count("synthetic") == len(removed_table) == 9
        assert restored.dwi_names() == [f"DWI:{i}" for i in range(12)]
        for j, entry in enumerate(kept_table.entries):
            i = small_table.index_of(entry)
            assert i is not None
            assert provenance[i] == "real"
            assert np.array_equal(restored.channel(f"DWI:{i}"), kept.channel(f"DWI:{j}"))

    def test_synthetic_channels_match_direct_synthesis(
        self, ratios: VolumeStack, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """Filled-in channels are what the generator produces for those entries."""
        kept_table, removed_table = downsample(small_table, 0.5, seed=9)
        kept = select_entries(ratios, small_table, kept_table)

        restored, _ = restore_qspace(
            kept, kept_table, small_table, g_params, TINY_GENERATOR, 2000.0
        )
        direct = synthesize_volume(ratios, removed_table, g_params, TINY_GENERATOR, 2000.0)

        for j, entry in enumerate(removed_table.entries):
            i = small_table.index_of(entry)
            assert np.array_equal(restored.channel(f"DWI:{i}"), direct.channel(f"DWI:{j}"))

    def test_absent_entry_rejected(
        self, ratios: VolumeStack, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """A kept gradient missing from the full table cannot be placed."""
        foreign = GradientTable(
            entries=(GradientEntry(direction=BVector(x=0.0, y=0.0, z=1.0), bvalue=1500.0),)
        )
        kept = select_entries(ratios, small_table, small_table.subset([0]))

        with pytest.raises(RestorationError, match="absent from the full table"):
            restore_qspace(kept, foreign, small_table, g_params, TINY_GENERATOR, 2000.0)

    def test_kept_count_mismatch(
        self, ratios: VolumeStack, small_table: GradientTable, g_params: ParamSet
    ) -> None:
        """The kept table must describe the kept DWI channels."""
        kept = select_entries(ratios, small_table, small_table.subset([0, 1]))

        with pytest.raises(GradientTableError, match="count mismatch"):
            restore_qspace(
                kept, small_table.subset([0]), small_table, g_params, TINY_GENERATOR, 2000.0
            )


class TestSelectEntries:
    """Test extraction of a sub-table's channels."""

    def test_renumbers_and_keeps_structural(
        self, ratios: VolumeStack, small_table: GradientTable
    ) -> None:
        """Picked channels become DWI:0..k-1 after the structural channels."""
        sub = small_table.subset([5, 2])

        picked = select_entries(ratios, small_table, sub)

        assert picked.channels == ("B0", "T2", "T1", "DWI:0", "DWI:1")
        assert np.array_equal(picked.channel("DWI:0"), ratios.channel("DWI:5"))
        assert np.array_equal(picked.channel("DWI:1"), ratios.channel("DWI:2"))

    def test_missing_entry(self, ratios: VolumeStack, small_table: GradientTable) -> None:
        """An entry absent from the source table is an error."""
        foreign = GradientTable(
            entries=(GradientEntry(direction=BVector(x=0.0, y=0.0, z=1.0), bvalue=1500.0),)
        )

        with pytest.raises(RestorationError, match="not in the source table"):
            select_entries(ratios, small_table, foreign)


class TestInterpolation:
    """Test gradient-interpolation paths and animation frames."""

    def test_path_endpoints_and_midpoint(self) -> None:
        """Three frames from x to y: x, (1/sqrt2, 1/sqrt2, 0), y."""
        path = interpolation_path(BVector(x=1, y=0, z=0), BVector(x=0, y=1, z=0), 2000.0, 3)

        assert path[0].direction == BVector(x=1, y=0, z=0)
        assert path[2].direction == BVector(x=0, y=1, z=0)
        assert path[1].direction.as_array() == pytest.approx(
            [1 / math.sqrt(2), 1 / math.sqrt(2), 0.0]
        )
        assert all(e.bvalue == 2000.0 for e in path)

    def test_single_frame(self) -> None:
        """One frame is the start direction."""
        path = interpolation_path(BVector(x=0, y=0, z=1), BVector(x=1, y=0, z=0), 1000.0, 1)

        assert [e.direction for e in path] == [BVector(x=0, y=0, z=1)]

    def test_frames_required(self) -> None:
        """At least one frame is needed."""
        with pytest.raises(ValueError, match="at least 1"):
            interpolation_path(BVector(x=1, y=0, z=0), BVector(x=0, y=1, z=0), 1000.0, 0)

    def test_frames_match_direct_synthesis(
        self, subject: PhantomSubject, g_params: ParamSet
    ) -> None:
        """Each frame is bit-identical to synthesizing its gradient directly."""
        path = interpolation_path(BVector(x=1, y=0, z=0), BVector(x=0, y=0, z=1), 2000.0, 3)

        frames = animate_frames(subject.structural, path, g_params, TINY_GENERATOR, 2000.0)

        assert len(frames) == 3
        for frame, entry in zip(frames, path, strict=True):
            table = GradientTable(entries=(entry,))
            direct = synthesize_volume(
                subject.structural, table, g_params, TINY_GENERATOR, 2000.0
            )
            assert frame.equals(direct)
