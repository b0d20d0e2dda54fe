"""Training samples: 2D axial slices paired with one gradient each.

DWI targets are B0 ratios (voxels at or below the B0 floor set to 0, ratios
clamped to the intensity cap). Structural inputs are each divided by their
per-subject maximum. Samples are drawn without replacement within an epoch;
the epoch order depends only on (seed, epoch) so any step's batch can be
rebuilt from its index alone.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from qspace_dwi.exceptions import GradientTableError
from qspace_dwi.models import TrainConfig
from qspace_dwi.qspace import ConditionVector, GradientTable, to_condition
from qspace_dwi.volume import VolumeStack, normalize_structural, rescale_by_b0

logger = logging.getLogger(__name__)

Slice = NDArray[np.float32]


@dataclass(frozen=True)
class TrainSample:
    """One (slice, gradient) training pair.

    Attributes:
        structural: Normalized structural channels [C, H, W].
        condition: Network condition for the gradient.
        target: DWI slice as B0 ratio [H, W].
        target_b0: B0 slice in ratio units [H, W] (1 inside the B0 mask).
    """

    structural: Slice
    condition: ConditionVector
    target: Slice
    target_b0: Slice


@dataclass(frozen=True)
class Batch:
    """Stacked samples ready for the networks."""

    structural: NDArray[np.float32]  # [N, C, H, W]
    conditions: NDArray[np.float32]  # [N, 4]
    targets: NDArray[np.float32]  # [N, 1, H, W]
    targets_b0: NDArray[np.float32]  # [N, 1, H, W]

    @property
    def size(self) -> int:
        return int(self.structural.shape[0])

    @property
    def l_norm(self) -> NDArray[np.float32]:
        return self.conditions[:, 3]


def fit_to_size(raster: NDArray[Any], size: int) -> NDArray[Any]:
    """Centre-crop or zero-pad the last two axes to size x size."""
    out = raster
    for axis in (-2, -1):
        n = out.shape[axis]
        if n > size:
            start = (n - size) // 2
            out = np.take(out, np.arange(start, start + size), axis=axis)
        elif n < size:
            before = (size - n) // 2
            pad = [(0, 0)] * out.ndim
            pad[axis] = (before, size - n - before)
            out = np.pad(out, pad)
    return out


def pad_to_multiple(raster: NDArray[Any], multiple: int) -> tuple[NDArray[Any], tuple[int, int]]:
    """Zero-pad the last two axes up to a multiple; also returns the original (H, W)."""
    h, w = raster.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    pad = [(0, 0)] * (raster.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(raster, pad), (h, w)


def augment_sample(
    s: TrainSample, rng: np.random.Generator, p_zero_b: float = 0.1, p_antipodal: float = 0.1
) -> TrainSample:
    """Apply the two q-space augmentations independently.

    With probability p_zero_b the normalized b-value becomes 0 and the target
    becomes the B0 slice; with probability p_antipodal the direction is
    negated and the target kept. Two uniforms are always drawn so the stream
    position does not depend on the outcome.
    """
    zero_b, antipodal = rng.random(2)
    condition = s.condition
    target = s.target
    if zero_b < p_zero_b:
        condition = condition.model_copy(update={"l_norm": 0.0})
        target = s.target_b0
    if antipodal < p_antipodal:
        condition = condition.model_copy(
            update={"tx": -condition.tx + 0.0, "ty": -condition.ty + 0.0, "tz": -condition.tz + 0.0}
        )
    if condition is s.condition:
        return s
    return replace(s, condition=condition, target=target)


def collate(samples: Sequence[TrainSample]) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    return Batch(
        structural=np.stack([s.structural for s in samples]).astype(np.float32),
        conditions=np.stack([s.condition.as_array() for s in samples]),
        targets=np.stack([s.target for s in samples])[:, np.newaxis].astype(np.float32),
        targets_b0=np.stack([s.target_b0 for s in samples])[:, np.newaxis].astype(np.float32),
    )


@dataclass
class SubjectArrays:
    """Per-subject rasters prepared once for sampling."""

    structural: NDArray[np.float32]  # [C, Z, H, W]
    ratios: NDArray[np.float32]  # [N, Z, H, W]
    b0_ratio: NDArray[np.float32]  # [Z, H, W]


def prepare_subject(
    structural: VolumeStack,
    dwis: VolumeStack,
    table: GradientTable,
    input_channels: int,
    crop_size: int | None = None,
) -> SubjectArrays:
    """Rescale a subject's DWIs by B0 and normalize its structural inputs.

    Raises:
        GradientTableError: If the table length differs from the DWI channel count.
    """
    dwi_names = dwis.dwi_names()
    if len(table) != len(dwi_names):
        raise GradientTableError(
            f"table/channel count mismatch: {len(table)} entries for {len(dwi_names)} DWI channels"
        )
    b0 = structural.channel("B0")
    ratios = np.stack([rescale_by_b0(dwis.channel(n), b0) for n in dwi_names])
    b0_ratio = rescale_by_b0(b0, b0)
    inputs = normalize_structural(structural, input_channels)
    if crop_size is not None:
        inputs, ratios, b0_ratio = (fit_to_size(a, crop_size) for a in (inputs, ratios, b0_ratio))
    return SubjectArrays(structural=inputs, ratios=ratios, b0_ratio=b0_ratio)


def _sample_at(
    subject: SubjectArrays, conditions: Sequence[ConditionVector], z: int, i: int
) -> TrainSample:
    return TrainSample(
        structural=subject.structural[:, z],
        condition=conditions[i],
        target=subject.ratios[i, z],
        target_b0=subject.b0_ratio[z],
    )


def build_samples(
    structural: VolumeStack,
    dwis: VolumeStack,
    table: GradientTable,
    rng: np.random.Generator | None = None,
    input_channels: int = 3,
    crop_size: int | None = None,
) -> Iterator[TrainSample]:
    """Stream every (axial slice, gradient) pair of one subject.

    Conditions are normalized by the table's max_bvalue. With an rng the
    pairs come in a random order, otherwise slice-major file order.

    Raises:
        GradientTableError: If the table length differs from the DWI channel count.
    """
    subject = prepare_subject(structural, dwis, table, input_channels, crop_size)
    conditions = [to_condition(e, table.max_bvalue) for e in table.entries]
    n_slices = subject.ratios.shape[1]
    pairs = [(z, i) for z in range(n_slices) for i in range(len(table))]
    order = rng.permutation(len(pairs)) if rng is not None else range(len(pairs))
    for k in order:
        z, i = pairs[int(k)]
        yield _sample_at(subject, conditions, z, i)


class SamplePool:
    """All training pairs across subjects, batched in seeded epoch order."""

    def __init__(
        self,
        subjects: Sequence[tuple[VolumeStack, VolumeStack]],
        table: GradientTable,
        config: TrainConfig,
    ) -> None:
        if not subjects:
            raise ValueError("no training subjects")
        self.config = config
        self.max_bvalue = config.max_bvalue if config.max_bvalue is not None else table.max_bvalue
        self.conditions = [to_condition(e, self.max_bvalue) for e in table.entries]
        self.subjects = [
            prepare_subject(s, d, table, config.generator.input_channels, config.crop_size)
            for s, d in subjects
        ]
        self.index = np.array(
            [
                (si, z, i)
                for si, subject in enumerate(self.subjects)
                for z in range(subject.ratios.shape[1])
                for i in range(len(table))
            ],
            dtype=np.int64,
        )
        self._orders: dict[int, NDArray[np.int64]] = {}
        logger.info(
            f"Sample pool: {len(self.subjects)} subjects, {len(self.index)} slice/gradient pairs"
        )

    def __len__(self) -> int:
        return len(self.index)

    def _epoch_order(self, epoch: int) -> NDArray[np.int64]:
        if epoch not in self._orders:
            rng = np.random.default_rng([self.config.seed, epoch])
            self._orders = {epoch: rng.permutation(len(self.index))}
        return self._orders[epoch]

    def samples_for_step(self, step: int) -> list[TrainSample]:
        """The un-augmented samples of batch `step`."""
        total = len(self.index)
        out: list[TrainSample] = []
        for k in range(step * self.config.batch_size, (step + 1) * self.config.batch_size):
            epoch, pos = divmod(k, total)
            si, z, i = self.index[self._epoch_order(epoch)[pos]]
            out.append(_sample_at(self.subjects[int(si)], self.conditions, int(z), int(i)))
        return out

    def batch_for_step(self, step: int) -> Batch:
        """Augmented batch for `step`; augmentation draws from default_rng([seed, step])."""
        rng = np.random.default_rng([self.config.seed, step])
        augmented = [
            augment_sample(s, rng, self.config.p_zero_b, self.config.p_antipodal)
            for s in self.samples_for_step(step)
        ]
        return collate(augmented)
