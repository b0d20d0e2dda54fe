"""Analytic diffusion-tensor phantom.

Each subject is an ellipsoidal "head" of isotropic tissue with an isotropic,
fast-diffusing core and two crossing anisotropic bundles running in the axial
plane. Signals follow the single-tensor model S = S0 * exp(-b * g^T D g),
optionally corrupted by Rician noise (magnitude of complex Gaussian noise).

Structural surrogates:
- B0 is the b=0 signal S0
- T2 is a monotone (quadratic) map of S0
- T1 is an inverted tissue contrast: core dark, bundles bright
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ValidationError

from qspace_dwi.exceptions import PhantomSpecError
from qspace_dwi.models import PhantomSpec
from qspace_dwi.qspace import BVector, GradientTable, read_gradient_table, write_gradient_table
from qspace_dwi.volume import (
    VolumeStack,
    dwi_channel_name,
    read_volume,
    to_ratio_stack,
    write_volume,
)

logger = logging.getLogger(__name__)

BACKGROUND, TISSUE, CORE, BUNDLE = 0, 1, 2, 3
QUADRATIC_FORM_TOLERANCE = 1e-12

# T1-like contrast per label (background, tissue, core, bundle)
_T1_CONTRAST = np.array([0.0, 0.75, 0.25, 1.0])

# In-plane point (u, v) where the bundles cross; kept clear of the central core
_CROSSING = (0.0, -0.22)

Split = Literal["train", "val", "test"]


@dataclass
class TensorField:
    """Ground truth of one phantom subject.

    Attributes:
        tensors: Diffusion tensors in mm^2/s, shape [Z, Y, X, 3, 3].
        s0: Baseline intensity, shape [Z, Y, X].
        labels: Tissue labels (0 background, 1 tissue, 2 core, 3 bundle).
    """

    tensors: NDArray[np.float64]
    s0: NDArray[np.float64]
    labels: NDArray[np.int8]

    def __post_init__(self) -> None:
        if self.tensors.shape != (*self.s0.shape, 3, 3) or self.labels.shape != self.s0.shape:
            raise PhantomSpecError("tensor, S0 and label rasters disagree in shape")
        if np.any(self.s0 < 0):
            raise PhantomSpecError("S0 must be non-negative")
        if np.any(self.s0[self.labels == BACKGROUND] != 0):
            raise PhantomSpecError("background voxels must have S0 = 0")
        if float(np.linalg.eigvalsh(self.tensors).min(initial=0.0)) < -QUADRATIC_FORM_TOLERANCE:
            raise PhantomSpecError("diffusion tensors must be positive semi-definite")

    @property
    def tissue_mask(self) -> NDArray[np.bool_]:
        return self.labels != BACKGROUND


@dataclass
class PhantomSubject:
    """One simulated subject with its split assignment."""

    index: int
    split: Split
    structural: VolumeStack
    dwis: VolumeStack
    field: TensorField

    def mask_volume(self) -> VolumeStack:
        mask = self.field.tissue_mask.astype(np.float32)[np.newaxis]
        return VolumeStack(channels=("mask",), data=mask, voxel_size=self.structural.voxel_size)


def simulate_dwi_signal(
    D: NDArray[np.floating[Any]], S0: float, theta: BVector | NDArray[np.floating[Any]], l: float
) -> float:
    """Noiseless single-tensor signal S0 * exp(-l * theta^T D theta).

    Raises:
        ValueError: If the b-value is negative.
        PhantomSpecError: If the quadratic form is below -1e-12 (D not PSD).
    """
    if l < 0:
        raise ValueError(f"b-value must be non-negative, got {l}")
    g = theta.as_array() if isinstance(theta, BVector) else np.asarray(theta, dtype=np.float64)
    q = float(g @ np.asarray(D, dtype=np.float64) @ g)
    if q < -QUADRATIC_FORM_TOLERANCE:
        raise PhantomSpecError(f"invalid tensor: negative quadratic form {q:.3e}")
    return float(S0 * math.exp(-l * max(q, 0.0)))


def simulate_volume_signals(field: TensorField, table: GradientTable) -> NDArray[np.float64]:
    """Noiseless signals for every table entry, shape [N, Z, Y, X]."""
    dirs = table.directions()
    q = np.einsum("ni,zyxij,nj->nzyx", dirs, field.tensors, dirs)
    if q.size and float(q.min()) < -QUADRATIC_FORM_TOLERANCE:
        raise PhantomSpecError(f"invalid tensor: negative quadratic form {float(q.min()):.3e}")
    b = table.bvalues()[:, None, None, None]
    return field.s0[None] * np.exp(-b * np.maximum(q, 0.0))


def add_rician_noise(
    signal: NDArray[np.float64], sigma: NDArray[np.float64] | float, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Magnitude of the signal plus complex Gaussian noise of std `sigma`."""
    real = rng.normal(0.0, 1.0, signal.shape) * sigma
    imag = rng.normal(0.0, 1.0, signal.shape) * sigma
    return np.sqrt((signal + real) ** 2 + imag**2)


def _prolate(
    direction: NDArray[np.float64], eigenvalues: tuple[float, float, float]
) -> NDArray[np.float64]:
    outer = np.outer(direction, direction)
    return eigenvalues[0] * outer + eigenvalues[1] * (np.eye(3) - outer)


def build_tensor_field(spec: PhantomSpec, rng: np.random.Generator) -> TensorField:
    """Lay out tissue labels, tensors and S0 for one subject.

    Raises:
        PhantomSpecError: If the head is empty or no bundle voxel exists.
    """
    if spec.head_radius <= 0:
        raise PhantomSpecError("degenerate phantom: head radius is zero")
    if not spec.bundle_angles_deg or spec.bundle_half_width <= 0:
        raise PhantomSpecError("degenerate phantom: no anisotropic bundle configured")
    nx, ny, nz = spec.dims
    j = spec.jitter

    def wobble(scale: float) -> float:
        return 1.0 + scale * j * rng.uniform(-1.0, 1.0)

    head_r = (spec.head_radius * wobble(0.5), spec.head_radius * wobble(0.5))
    core_r = spec.core_radius * wobble(0.5)
    half_width = spec.bundle_half_width * wobble(0.3)
    angles = [math.radians(a + 30.0 * j * rng.uniform(-1.0, 1.0)) for a in spec.bundle_angles_deg]
    cu = _CROSSING[0] + 0.02 * j * rng.uniform(-1.0, 1.0)
    cv = _CROSSING[1] + 0.02 * j * rng.uniform(-1.0, 1.0)
    s0_values = {
        TISSUE: spec.s0_tissue * wobble(0.3),
        CORE: spec.s0_core * wobble(0.3),
        BUNDLE: spec.s0_bundle * wobble(0.3),
    }

    u = (np.arange(nx) + 0.5) / nx - 0.5
    v = (np.arange(ny) + 0.5) / ny - 0.5
    w = 2.0 * ((np.arange(nz) + 0.5) / nz - 0.5)
    W, V, U = np.meshgrid(w, v, u, indexing="ij")  # [Z, Y, X]
    taper = np.sqrt(1.0 - 0.5 * W**2)

    head = (U / (head_r[0] * taper)) ** 2 + (V / (head_r[1] * taper)) ** 2 <= 1.0
    core = head & ((U**2 + V**2) <= (core_r * taper) ** 2)
    if not head.any():
        raise PhantomSpecError("degenerate phantom: no tissue inside the field of view")

    labels = np.where(head, TISSUE, BACKGROUND).astype(np.int8)
    labels[core] = CORE
    tensors = np.zeros((nz, ny, nx, 3, 3))
    tensors[labels == TISSUE] = spec.tissue_diffusivity * np.eye(3)
    tensors[core] = spec.core_diffusivity * np.eye(3)

    bundle_sum = np.zeros_like(tensors)
    bundle_count = np.zeros((nz, ny, nx))
    for angle in angles:
        direction = np.array([math.cos(angle), math.sin(angle), 0.0])
        distance = np.abs(-math.sin(angle) * (U - cu) + math.cos(angle) * (V - cv))
        band = head & ~core & (distance < half_width)
        bundle_sum[band] += _prolate(direction, spec.bundle_eigenvalues)
        bundle_count[band] += 1
    in_bundle = bundle_count > 0
    if not in_bundle.any():
        raise PhantomSpecError("degenerate phantom: no anisotropic bundle voxels")
    # crossing voxels carry the mean of the bundle tensors
    tensors[in_bundle] = bundle_sum[in_bundle] / bundle_count[in_bundle][:, None, None]
    labels[in_bundle] = BUNDLE

    s0 = np.zeros((nz, ny, nx))
    for label, value in s0_values.items():
        s0[labels == label] = value
    return TensorField(tensors=tensors, s0=s0, labels=labels)


def structural_channels(
    field: TensorField, spec: PhantomSpec, rng: np.random.Generator
) -> NDArray[np.float64]:
    """B0, T2 and T1 surrogate rasters [3, Z, Y, X] (noise applied if configured)."""
    reference = max(spec.s0_tissue, spec.s0_core, spec.s0_bundle, 1e-12)
    t2 = (field.s0 / reference) ** 2
    t1 = _T1_CONTRAST[field.labels] * (1.0 + 0.1 * spec.jitter * rng.uniform(-1.0, 1.0))
    channels = np.stack([field.s0, t2, t1])
    if spec.noise_fraction > 0:
        channels = add_rician_noise(channels, spec.noise_fraction * channels, rng)
    return channels


def split_subjects(n_subjects: int, n_val: int, n_test: int) -> list[Split]:
    """Subject-disjoint split labels: train first, then val, then test."""
    n_train = n_subjects - n_val - n_test
    if n_train < 1:
        raise PhantomSpecError("split leaves no training subject")
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def generate_subject(
    spec: PhantomSpec, table: GradientTable, seed: int, index: int, split: Split
) -> PhantomSubject:
    """Simulate one subject; its stream depends only on (seed, index)."""
    rng = np.random.default_rng([seed, index])
    field = build_tensor_field(spec, rng)
    structural = structural_channels(field, spec, rng)
    signals = simulate_volume_signals(field, table)
    if spec.noise_fraction > 0:
        signals = add_rician_noise(signals, spec.noise_fraction * field.s0[None], rng)
    voxel_size = spec.voxel_size
    return PhantomSubject(
        index=index,
        split=split,
        structural=VolumeStack(channels=("B0", "T2", "T1"), data=structural, voxel_size=voxel_size),
        dwis=VolumeStack(
            channels=tuple(dwi_channel_name(i) for i in range(len(table))),
            data=signals,
            voxel_size=voxel_size,
        ),
        field=field,
    )


def generate_phantom_dataset(
    spec: PhantomSpec, table: GradientTable, seed: int
) -> list[PhantomSubject]:
    """Simulate every subject of `spec` for the given gradient table.

    Args:
        spec: Geometry, tissue and noise parameters.
        table: Gradient table driving the DWI channels.
        seed: Run seed; subject i draws from default_rng([seed, i]).

    Returns:
        Subjects in index order with disjoint train/val/test splits.

    Raises:
        PhantomSpecError: For a degenerate spec (no tissue or no bundle).
    """
    splits = split_subjects(spec.n_subjects, spec.n_val, spec.n_test)
    subjects = [generate_subject(spec, table, seed, i, split) for i, split in enumerate(splits)]
    logger.info(
        f"Simulated {len(subjects)} phantom subjects of {spec.dims} with {len(table)} gradients"
    )
    return subjects


# ---------------------------------------------------------------------------
# On-disk dataset
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
TABLE_STEM = "table"


class SubjectEntry(BaseModel):
    """Manifest row of one simulated subject."""

    index: int
    split: Split
    directory: str


class DatasetManifest(BaseModel):
    """Contents of a simulated dataset directory."""

    seed: int
    spec: PhantomSpec
    bvec: str = f"{TABLE_STEM}.bvec"
    bval: str = f"{TABLE_STEM}.bval"
    subjects: list[SubjectEntry]


@dataclass
class StoredSubject:
    """A subject read back from disk (raw DWIs plus derived volumes)."""

    index: int
    split: Split
    structural: VolumeStack
    dwis: VolumeStack
    ratios: VolumeStack
    mask: VolumeStack


def write_phantom_dataset(
    subjects: list[PhantomSubject],
    table: GradientTable,
    spec: PhantomSpec,
    seed: int,
    out_dir: Path,
) -> Path:
    """Write subjects, the gradient table and a manifest under `out_dir`.

    Each subject directory holds structural.qvol (B0, T2, T1), dwis.qvol (raw
    signals), ratios.qvol (structural plus B0-ratio DWIs) and mask.qvol.

    Returns:
        Path of the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_gradient_table(table, out_dir / f"{TABLE_STEM}.bvec", out_dir / f"{TABLE_STEM}.bval")
    entries: list[SubjectEntry] = []
    for subject in subjects:
        directory = f"subject_{subject.index:03d}"
        target = out_dir / directory
        write_volume(subject.structural, target / "structural.qvol")
        write_volume(subject.dwis, target / "dwis.qvol")
        write_volume(to_ratio_stack(subject.structural, subject.dwis), target / "ratios.qvol")
        write_volume(subject.mask_volume(), target / "mask.qvol")
        entries.append(SubjectEntry(index=subject.index, split=subject.split, directory=directory))
    manifest = DatasetManifest(seed=seed, spec=spec, subjects=entries)
    path = out_dir / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(subjects)} subjects to {out_dir}")
    return path


def read_phantom_dataset(
    data_dir: Path, split: Split | None = None
) -> tuple[list[StoredSubject], GradientTable]:
    """Read a dataset written by `write_phantom_dataset`, optionally one split.

    Raises:
        OSError: If a file is missing.
        PhantomSpecError: If the manifest is malformed.
    """
    data_dir = Path(data_dir)
    try:
        manifest = DatasetManifest.model_validate_json(
            (data_dir / MANIFEST_NAME).read_text(encoding="utf-8")
        )
    except ValidationError as e:
        raise PhantomSpecError(f"malformed dataset manifest in {data_dir}: {e}") from e
    table = read_gradient_table(data_dir / manifest.bvec, data_dir / manifest.bval)
    subjects: list[StoredSubject] = []
    for entry in manifest.subjects:
        if split is not None and entry.split != split:
            continue
        source = data_dir / entry.directory
        subjects.append(
            StoredSubject(
                index=entry.index,
                split=entry.split,
                structural=read_volume(source / "structural.qvol"),
                dwis=read_volume(source / "dwis.qvol"),
                ratios=read_volume(source / "ratios.qvol"),
                mask=read_volume(source / "mask.qvol"),
            )
        )
    return subjects, table
