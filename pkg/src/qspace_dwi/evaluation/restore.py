"""Synthesis, q-space restoration and gradient-interpolation frames.

Synthesized DWIs are B0 ratios: the generator runs slice by slice on the
normalized structural inputs, one condition per gradient, and voxels where
B0 is at or below the floor are set to 0 as in the training targets.
Restoration merges acquired DWIs, copied bit for bit, with synthesized ones
for every entry of the full table that was not acquired.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from qspace_dwi.diffcore.array import ParamSet
from qspace_dwi.exceptions import GradientTableError, RestorationError
from qspace_dwi.models import GeneratorConfig
from qspace_dwi.networks.generator import generator_forward
from qspace_dwi.qspace import BVector, GradientEntry, GradientTable, slerp, to_condition
from qspace_dwi.training.samples import pad_to_multiple
from qspace_dwi.volume import VolumeStack, dwi_channel_name, normalize_structural, rescale_by_b0

logger = logging.getLogger(__name__)

Provenance = Literal["real", "synthetic"]


class Synthesizer:
    """Generator bound to one subject's structural inputs."""

    def __init__(
        self,
        structural: VolumeStack,
        g_params: ParamSet,
        config: GeneratorConfig,
        max_bvalue: float,
    ) -> None:
        self.structural = structural
        self.params = g_params.frozen()
        self.config = config
        self.max_bvalue = max_bvalue
        inputs = normalize_structural(structural, config.input_channels)  # [C, Z, Y, X]
        self.inputs, self.size = pad_to_multiple(inputs.transpose(1, 0, 2, 3), 2**config.depth)
        b0 = structural.channel("B0")
        self.support = rescale_by_b0(b0, b0) > 0

    def slices(self, entry: GradientEntry) -> NDArray[np.float32]:
        """Synthesized ratio volume [Z, Y, X] for one gradient."""
        condition = to_condition(entry, self.max_bvalue)
        out = generator_forward(self.inputs, condition, self.params, self.config).values
        h, w = self.size
        return np.where(self.support, out[:, 0, :h, :w], 0.0).astype(np.float32)

    def volume(self, table: GradientTable) -> VolumeStack:
        """DWI:0..N-1 ratio channels, one per table entry."""
        if len(table):
            data = np.stack([self.slices(e) for e in table.entries])
        else:
            data = np.zeros((0, *self.structural.data.shape[1:]), dtype=np.float32)
        return VolumeStack(
            channels=tuple(dwi_channel_name(i) for i in range(len(table))),
            data=data,
            voxel_size=self.structural.voxel_size,
        )


def synthesize_volume(
    structural: VolumeStack,
    table: GradientTable,
    g_params: ParamSet,
    config: GeneratorConfig,
    max_bvalue: float,
) -> VolumeStack:
    """Synthesize one ratio channel per table entry from structural inputs."""
    logger.info(f"Synthesizing {len(table)} DWIs over {structural.num_slices} slices")
    return Synthesizer(structural, g_params, config, max_bvalue).volume(table)


def select_entries(
    stack: VolumeStack, table: GradientTable, sub_table: GradientTable
) -> VolumeStack:
    """Channels of `stack` matching `sub_table`, renumbered DWI:0..k-1, structural kept.

    Raises:
        GradientTableError: If the table length differs from the DWI count.
        RestorationError: If a sub-table entry is not in `table`.
    """
    dwi_names = stack.dwi_names()
    if len(dwi_names) != len(table):
        raise GradientTableError(
            f"table/channel count mismatch: {len(table)} entries for {len(dwi_names)} DWI channels"
        )
    picked = []
    for j, entry in enumerate(sub_table.entries):
        i = table.index_of(entry)
        if i is None:
            raise RestorationError(f"entry {j} ({entry.bvalue:g} s/mm^2) not in the source table")
        picked.append(stack.channel(dwi_names[i]))
    structural = stack.structural_names()
    data = [stack.channel(n) for n in structural] + picked
    return VolumeStack(
        channels=(*structural, *(dwi_channel_name(j) for j in range(len(sub_table)))),
        data=np.stack(data) if data else np.zeros((0, *stack.data.shape[1:]), dtype=np.float32),
        voxel_size=stack.voxel_size,
    )


def restore_qspace(
    kept: VolumeStack,
    kept_table: GradientTable,
    full_table: GradientTable,
    g_params: ParamSet,
    config: GeneratorConfig,
    max_bvalue: float,
    structural: VolumeStack | None = None,
) -> tuple[VolumeStack, list[Provenance]]:
    """Complete a downsampled acquisition over the full gradient table.

    Args:
        kept: Acquired DWIs (B0 ratios, DWI:0..k-1 in kept-table order),
            optionally with structural channels.
        kept_table: Gradient entries of the acquired DWIs.
        full_table: Target gradient table.
        g_params: Trained generator parameters.
        config: Generator architecture.
        max_bvalue: Normalization constant used in training.
        structural: Structural volume; taken from `kept` when None.

    Returns:
        The restored stack (structural channels, then DWI:0..N-1 in full-table
        order) and a provenance label per full-table entry.

    Raises:
        GradientTableError: If kept_table does not match the kept DWI count.
        RestorationError: If a kept entry is absent from the full table or
            matches an entry already taken.
    """
    kept_names = kept.dwi_names()
    if len(kept_names) != len(kept_table):
        raise GradientTableError(
            f"table/channel count mismatch: {len(kept_table)} entries "
            f"for {len(kept_names)} DWI channels"
        )
    source: dict[int, str] = {}
    for j, entry in enumerate(kept_table.entries):
        i = full_table.index_of(entry)
        if i is None:
            raise RestorationError(f"kept entry {j} is absent from the full table")
        if i in source:
            raise RestorationError(f"kept entry {j} duplicates full-table entry {i}")
        source[i] = kept_names[j]

    structural = structural if structural is not None else kept
    missing = [i for i in range(len(full_table)) if i not in source]
    synthesized: dict[int, NDArray[np.float32]] = {}
    if missing:
        synthesizer = Synthesizer(structural, g_params, config, max_bvalue)
        for i in missing:
            synthesized[i] = synthesizer.slices(full_table.entries[i])

    channels = [
        kept.channel(source[i]) if i in source else synthesized[i] for i in range(len(full_table))
    ]
    structural_names = structural.structural_names()
    data = [structural.channel(n) for n in structural_names] + channels
    restored = VolumeStack(
        channels=(*structural_names, *(dwi_channel_name(i) for i in range(len(full_table)))),
        data=np.stack(data),
        voxel_size=kept.voxel_size,
    )
    provenance: list[Provenance] = [
        "real" if i in source else "synthetic" for i in range(len(full_table))
    ]
    logger.info(f"Restored {len(full_table)} DWIs: {len(source)} real, {len(missing)} synthetic")
    return restored, provenance


def interpolation_path(
    start: BVector, end: BVector, bvalue: float, n_frames: int
) -> list[GradientEntry]:
    """Entries along the great circle from start to end at a fixed b-value.

    Frame i sits at t = i / (n_frames - 1), so the first and last frames are
    exactly the endpoints.

    Raises:
        ValueError: If n_frames < 1.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be at least 1, got {n_frames}")
    ts = [0.0] if n_frames == 1 else [i / (n_frames - 1) for i in range(n_frames)]
    return [GradientEntry(direction=slerp(start, end, t), bvalue=bvalue) for t in ts]


def animate_frames(
    structural: VolumeStack,
    path: Sequence[GradientEntry],
    g_params: ParamSet,
    config: GeneratorConfig,
    max_bvalue: float,
) -> list[VolumeStack]:
    """One single-channel synthesized volume per path entry."""
    synthesizer = Synthesizer(structural, g_params, config, max_bvalue)
    return [synthesizer.volume(GradientTable(entries=(entry,))) for entry in path]
