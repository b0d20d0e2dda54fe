"""Multi-channel volumes and the QVOL container.

A VolumeStack holds named channels over a shared 3D grid. Data is a float32
array [C, Z, Y, X], which is also the on-disk raster order (channels
concatenated, each Z-major then Y, X fastest).

QVOL layout:
    bytes 0-7    magic b"QVOL0001"
    bytes 8-11   header length H (unsigned 32-bit little-endian)
    bytes 12..   UTF-8 JSON header {"dims": [X, Y, Z], "voxel_size": [...], "channels": [...]}
    remainder    32-bit little-endian floats
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from qspace_dwi.exceptions import VolumeFormatError
from qspace_dwi.settings import settings

logger = logging.getLogger(__name__)

QVOL_MAGIC = b"QVOL0001"
_LENGTH = struct.Struct("<I")
_PREFIX = len(QVOL_MAGIC) + _LENGTH.size

STRUCTURAL_CHANNELS = ("B0", "T2", "T1")
DWI_PREFIX = "DWI:"

Raster = NDArray[np.float32]


def dwi_channel_name(index: int) -> str:
    return f"{DWI_PREFIX}{index}"


@dataclass(eq=False)
class VolumeStack:
    """Named channels over one 3D grid.

    Attributes:
        channels: Channel names, e.g. B0, T2, T1, DWI:0 ... DWI:N-1.
        data: float32 raster of shape [C, Z, Y, X].
        voxel_size: Voxel size in mm, (x, y, z).
    """

    channels: tuple[str, ...]
    data: Raster
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.channels = tuple(self.channels)
        self.data = np.asarray(self.data, dtype=np.float32)
        self.voxel_size = tuple(float(v) for v in self.voxel_size)  # type: ignore[assignment]
        if self.data.ndim != 4:
            raise VolumeFormatError(
                f"volume data must be [C, Z, Y, X], got shape {self.data.shape}"
            )
        if len(self.channels) != self.data.shape[0]:
            raise VolumeFormatError(
                f"{len(self.channels)} channel names for {self.data.shape[0]} channels"
            )
        if len(set(self.channels)) != len(self.channels):
            raise VolumeFormatError("channel names must be unique")
        if len(self.voxel_size) != 3:
            raise VolumeFormatError("voxel_size must have three components")
        self._index = {name: i for i, name in enumerate(self.channels)}

    @property
    def dims(self) -> tuple[int, int, int]:
        """Grid size as (X, Y, Z)."""
        _, z, y, x = self.data.shape
        return x, y, z

    @property
    def num_slices(self) -> int:
        return int(self.data.shape[1])

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def channel(self, name: str) -> Raster:
        """[Z, Y, X] raster of one channel (a view)."""
        if name not in self._index:
            raise KeyError(f"channel '{name}' not in volume ({', '.join(self.channels[:6])}...)")
        return self.data[self._index[name]]

    def select(self, names: Sequence[str]) -> VolumeStack:
        return VolumeStack(
            channels=tuple(names),
            data=np.stack([self.channel(n) for n in names]),
            voxel_size=self.voxel_size,
        )

    def dwi_names(self) -> list[str]:
        return [c for c in self.channels if c.startswith(DWI_PREFIX)]

    def structural_names(self) -> list[str]:
        return [c for c in STRUCTURAL_CHANNELS if c in self._index]

    def equals(self, other: VolumeStack) -> bool:
        """Bit-exact comparison of names, geometry and raster."""
        return (
            self.channels == other.channels
            and self.voxel_size == other.voxel_size
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )


# ---------------------------------------------------------------------------
# QVOL container
# ---------------------------------------------------------------------------


def encode_volume(stack: VolumeStack) -> bytes:
    if not np.all(np.isfinite(stack.data)):
        raise VolumeFormatError("refusing to write non-finite volume data")
    header = json.dumps(
        {
            "dims": list(stack.dims),
            "voxel_size": list(stack.voxel_size),
            "channels": list(stack.channels),
        }
    ).encode("utf-8")
    raster = np.ascontiguousarray(stack.data, dtype="<f4").tobytes()
    return QVOL_MAGIC + _LENGTH.pack(len(header)) + header + raster


def decode_volume(blob: bytes) -> VolumeStack:
    """Parse QVOL bytes.

    Raises:
        VolumeFormatError: On bad magic, truncation or header/raster size mismatch.
    """
    if blob[: len(QVOL_MAGIC)] != QVOL_MAGIC:
        raise VolumeFormatError("bad magic: not a QVOL0001 container")
    if len(blob) < _PREFIX:
        raise VolumeFormatError("truncated: missing header length")
    (header_len,) = _LENGTH.unpack_from(blob, len(QVOL_MAGIC))
    if _PREFIX + header_len > len(blob):
        raise VolumeFormatError(f"truncated: header of {header_len} bytes overruns the file")
    try:
        header: dict[str, Any] = json.loads(blob[_PREFIX : _PREFIX + header_len].decode("utf-8"))
        x, y, z = (int(v) for v in header["dims"])
        voxel_size = tuple(float(v) for v in header["voxel_size"])
        channels = tuple(str(c) for c in header["channels"])
    except (ValueError, KeyError, TypeError) as e:
        raise VolumeFormatError(f"malformed header: {e}") from e

    raster = blob[_PREFIX + header_len :]
    if len(raster) % 4 != 0:
        raise VolumeFormatError(f"truncated raster: {len(raster)} bytes is not a whole float count")
    expected = len(channels) * z * y * x
    found = len(raster) // 4
    if found != expected:
        raise VolumeFormatError(
            f"size mismatch: header describes {x}x{y}x{z}x{len(channels)} = {expected} floats, "
            f"raster holds {found}"
        )
    data = np.frombuffer(raster, dtype="<f4").astype(np.float32).reshape(len(channels), z, y, x)
    return VolumeStack(
        channels=channels,
        data=data,
        voxel_size=voxel_size,  # type: ignore[arg-type]
    )


def write_volume(stack: VolumeStack, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_volume(stack))
    logger.debug(f"Wrote {len(stack.channels)}-channel volume to {path}")


def read_volume(path: Path) -> VolumeStack:
    """Read a QVOL file.

    Raises:
        OSError: If the file cannot be read.
        VolumeFormatError: If the content is not a valid container.
    """
    return decode_volume(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Intensity conventions
# ---------------------------------------------------------------------------


def rescale_by_b0(
    dwi: NDArray[np.floating[Any]],
    b0: NDArray[np.floating[Any]],
    floor_fraction: float | None = None,
    cap: float | None = None,
) -> Raster:
    """Voxel-wise DWI / B0 ratio.

    Works on [..., Y, X] rasters; the floor is `floor_fraction` times the
    maximum of each axial B0 slice. Voxels with B0 at or below the floor are
    set to 0 and ratios are clamped to [0, cap].
    """
    floor_fraction = settings.b0_floor_fraction if floor_fraction is None else floor_fraction
    cap = settings.intensity_cap if cap is None else cap
    b0 = np.asarray(b0, dtype=np.float64)
    dwi = np.asarray(dwi, dtype=np.float64)
    floor = floor_fraction * b0.max(axis=(-2, -1), keepdims=True)
    valid = b0 > floor
    ratio = np.divide(dwi, b0, out=np.zeros(np.broadcast_shapes(dwi.shape, b0.shape)), where=valid)
    clamped = int(np.count_nonzero(ratio > cap))
    if clamped:
        logger.debug(f"Clamped {clamped} ratio voxels above cap {cap}")
    return np.clip(ratio, 0.0, cap).astype(np.float32)


def to_ratio_stack(structural: VolumeStack, dwis: VolumeStack) -> VolumeStack:
    """Combine structural channels with B0-ratio DWIs into one stack.

    Raises:
        VolumeFormatError: If B0 is missing or the grids differ.
    """
    if "B0" not in structural:
        raise VolumeFormatError("structural volume has no B0 channel")
    if structural.data.shape[1:] != dwis.data.shape[1:]:
        raise VolumeFormatError(
            f"grid mismatch: structural {structural.dims} vs dwis {dwis.dims}"
        )
    b0 = structural.channel("B0")
    names = structural.structural_names()
    dwi_names = dwis.dwi_names()
    ratios = [rescale_by_b0(dwis.channel(n), b0) for n in dwi_names]
    return VolumeStack(
        channels=(*names, *dwi_names),
        data=np.concatenate([structural.select(names).data, np.stack(ratios)]),
        voxel_size=structural.voxel_size,
    )


def normalize_structural(stack: VolumeStack, input_channels: int) -> Raster:
    """Network input raster [input_channels, Z, Y, X].

    Takes B0, T2, T1 in that order (the first `input_channels` of them) and
    divides each by its per-subject maximum.

    Raises:
        VolumeFormatError: If a required structural channel is missing.
    """
    wanted = STRUCTURAL_CHANNELS[:input_channels]
    missing = [c for c in wanted if c not in stack]
    if missing:
        raise VolumeFormatError(f"structural volume lacks channels {missing}")
    out = np.empty((len(wanted), *stack.data.shape[1:]), dtype=np.float32)
    for i, name in enumerate(wanted):
        raster = stack.channel(name)
        peak = float(raster.max())
        out[i] = raster / peak if peak > 0 else raster
    return out
