"""Gradient tables: parsing, validation, conditioning and q-space downsampling.

Tables use the FSL text layout: the bvec file holds three rows (x, y, z
components of all N directions) and the bval file one row of N b-values.
Entry order is always the order of the source file.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from qspace_dwi.exceptions import GradientTableError

logger = logging.getLogger(__name__)

NORM_BAND = (0.9, 1.1)
UNIT_TOLERANCE = 1e-6
MATCH_TOLERANCE = 1e-6


class BVector(BaseModel):
    """Diffusion-encoding direction (unit, or zero for b=0 entries)."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, values: Sequence[float] | NDArray[Any]) -> BVector:
        x, y, z = (float(c) + 0.0 for c in values)
        return cls(x=x, y=y, z=z)

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_zero(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.z == 0.0

    def negated(self) -> BVector:
        return BVector(x=-self.x + 0.0, y=-self.y + 0.0, z=-self.z + 0.0)


class GradientEntry(BaseModel):
    """One q-space sample: direction and b-value in s/mm^2."""

    model_config = ConfigDict(frozen=True)

    direction: BVector
    bvalue: float = Field(ge=0.0)

    def matches(self, other: GradientEntry, tol: float = MATCH_TOLERANCE) -> bool:
        """True when both direction and b-value agree within `tol` (relative for b)."""
        if abs(self.bvalue - other.bvalue) > tol * max(1.0, self.bvalue):
            return False
        return bool(np.all(np.abs(self.direction.as_array() - other.direction.as_array()) <= tol))


class GradientTable(BaseModel):
    """Ordered q-space sampling scheme.

    Attributes:
        entries: Samples in file order.
        max_bvalue_override: Normalization constant to use instead of the
            table maximum (e.g. the maximum seen during training).
    """

    model_config = ConfigDict(frozen=True)

    entries: tuple[GradientEntry, ...]
    max_bvalue_override: float | None = Field(default=None, gt=0.0)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def max_bvalue(self) -> float:
        if self.max_bvalue_override is not None:
            return self.max_bvalue_override
        return max((e.bvalue for e in self.entries), default=0.0)

    def directions(self) -> NDArray[np.float64]:
        """[N, 3] direction array."""
        return np.array([e.direction.as_array() for e in self.entries], dtype=np.float64).reshape(
            -1, 3
        )

    def bvalues(self) -> NDArray[np.float64]:
        return np.array([e.bvalue for e in self.entries], dtype=np.float64)

    def subset(self, indices: Sequence[int] | NDArray[np.integer[Any]]) -> GradientTable:
        """Entries at `indices` (in the given order), keeping this table's max_bvalue."""
        return GradientTable(
            entries=tuple(self.entries[int(i)] for i in indices),
            max_bvalue_override=self.max_bvalue if self.entries else self.max_bvalue_override,
        )

    def with_max_bvalue(self, max_bvalue: float | None) -> GradientTable:
        return self.model_copy(update={"max_bvalue_override": max_bvalue})

    def index_of(self, entry: GradientEntry, tol: float = MATCH_TOLERANCE) -> int | None:
        """Position of the first entry matching `entry`, or None."""
        for i, candidate in enumerate(self.entries):
            if candidate.matches(entry, tol):
                return i
        return None


class ConditionVector(BaseModel):
    """Network conditioning input (direction, normalized b-value)."""

    model_config = ConfigDict(frozen=True)

    tx: float
    ty: float
    tz: float
    l_norm: float = Field(ge=0.0, le=1.0)

    def as_array(self) -> NDArray[np.float32]:
        return np.array([self.tx, self.ty, self.tz, self.l_norm], dtype=np.float32)

    def direction(self) -> BVector:
        return BVector(x=self.tx, y=self.ty, z=self.tz)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_rows(text: str, what: str) -> list[list[float]]:
    rows: list[list[float]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        row: list[float] = []
        for token in tokens:
            try:
                value = float(token)
            except ValueError:
                raise GradientTableError(
                    f"non-numeric token '{token}' in {what} line {line_no}"
                ) from None
            if not math.isfinite(value):
                raise GradientTableError(f"non-numeric token '{token}' in {what} line {line_no}")
            row.append(value)
        rows.append(row)
    return rows


def parse_gradient_table(
    bvec_text: str, bval_text: str, max_bvalue: float | None = None
) -> GradientTable:
    """Parse FSL bvec/bval text into a validated table.

    Directions already unit within 1e-6 are kept as written; other norms in
    [0.9, 1.1] are renormalized. A zero direction is legal only with b-value 0.

    Args:
        bvec_text: Three whitespace-separated rows (x, y, z components).
        bval_text: One row of b-values.
        max_bvalue: Optional normalization override carried by the table.

    Returns:
        GradientTable with N entries in file order.

    Raises:
        GradientTableError: On row-length mismatch, non-numeric token,
            negative b-value or an out-of-band direction norm.
    """
    bvec_rows = _parse_rows(bvec_text, "bvec")
    bval_rows = _parse_rows(bval_text, "bval")
    if len(bvec_rows) != 3:
        raise GradientTableError(f"bvec must hold 3 rows, found {len(bvec_rows)}")
    if len(bval_rows) != 1:
        raise GradientTableError(f"bval must hold 1 row, found {len(bval_rows)}")
    lengths = [len(r) for r in (*bvec_rows, bval_rows[0])]
    if len(set(lengths)) != 1:
        raise GradientTableError(f"row-length mismatch: bvec {lengths[:3]}, bval {lengths[3]}")

    entries: list[GradientEntry] = []
    for i, bvalue in enumerate(bval_rows[0]):
        if bvalue < 0:
            raise GradientTableError(f"negative b-value {bvalue} at entry {i}")
        vec = np.array([bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]], dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            if bvalue != 0.0:
                raise GradientTableError(f"zero direction with b-value {bvalue} at entry {i}")
        elif abs(norm - 1.0) > UNIT_TOLERANCE:
            if NORM_BAND[0] <= norm <= NORM_BAND[1]:
                vec = vec / norm
            elif bvalue != 0.0:
                raise GradientTableError(
                    f"direction norm {norm:.4f} outside [{NORM_BAND[0]}, {NORM_BAND[1]}] "
                    f"at entry {i}"
                )
            else:
                # b=0 carries no direction information
                vec = np.zeros(3)
        entries.append(GradientEntry(direction=BVector.from_array(vec), bvalue=bvalue))
    logger.debug(f"Parsed gradient table with {len(entries)} entries")
    return GradientTable(entries=tuple(entries), max_bvalue_override=max_bvalue)


def read_gradient_table(
    bvec_path: Path, bval_path: Path, max_bvalue: float | None = None
) -> GradientTable:
    """Read a table from bvec/bval files.

    Raises:
        OSError: If a file cannot be read.
        GradientTableError: If the content is invalid.
    """
    return parse_gradient_table(
        Path(bvec_path).read_text(encoding="utf-8"),
        Path(bval_path).read_text(encoding="utf-8"),
        max_bvalue=max_bvalue,
    )


def _format_component(value: float) -> str:
    return format(value + 0.0, ".8g")


def _format_bvalue(value: float) -> str:
    return str(int(value)) if value.is_integer() else repr(value)


def format_bvec(table: GradientTable) -> str:
    dirs = table.directions()
    rows = [" ".join(_format_component(float(c)) for c in dirs[:, axis]) for axis in range(3)]
    return "\n".join(rows) + "\n"


def format_bval(table: GradientTable) -> str:
    return " ".join(_format_bvalue(e.bvalue) for e in table.entries) + "\n"


def write_gradient_table(table: GradientTable, bvec_path: Path, bval_path: Path) -> None:
    Path(bvec_path).write_text(format_bvec(table), encoding="utf-8")
    Path(bval_path).write_text(format_bval(table), encoding="utf-8")


# ---------------------------------------------------------------------------
# Conditioning and q-space operations
# ---------------------------------------------------------------------------


def to_condition(entry: GradientEntry, max_bvalue: float) -> ConditionVector:
    """Map an entry to the network condition (direction, b / max_bvalue).

    Raises:
        GradientTableError: If max_bvalue is not positive or the entry exceeds it.
    """
    if max_bvalue <= 0:
        raise GradientTableError(f"max_bvalue must be positive, got {max_bvalue}")
    if entry.bvalue > max_bvalue:
        raise GradientTableError(
            f"out-of-range condition: b-value {entry.bvalue} exceeds max {max_bvalue}"
        )
    d = entry.direction
    return ConditionVector(tx=d.x, ty=d.y, tz=d.z, l_norm=entry.bvalue / max_bvalue)


def retained_count(n: int, r: float) -> int:
    """k = round((1 - r) * n) with halves rounded up."""
    return math.floor((1.0 - r) * n + 0.5)


def downsample(table: GradientTable, r: float, seed: int) -> tuple[GradientTable, GradientTable]:
    """Split a table into a uniformly random kept subset and the removed rest.

    Both halves preserve file order and inherit the input's max_bvalue so
    their conditions stay comparable.

    Raises:
        ValueError: If r is outside [0, 1).
        GradientTableError: If the table is empty.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError(f"downsampling factor r must lie in [0, 1), got {r}")
    n = len(table)
    if n < 1:
        raise GradientTableError("cannot downsample an empty table")
    k = retained_count(n, r)
    rng = np.random.default_rng(seed)
    kept_idx = np.sort(rng.choice(n, size=k, replace=False))
    removed_idx = np.setdiff1d(np.arange(n), kept_idx)
    logger.info(f"Downsampled {n} entries at r={r}: kept {k}, removed {n - k}")
    return table.subset(kept_idx), table.subset(removed_idx)


def antipodal_canonicalize(v: BVector) -> BVector:
    """Return v or -v, whichever has a positive first nonzero component."""
    for component in (v.x, v.y, v.z):
        if component != 0.0:
            return v if component > 0 else v.negated()
    return v


def slerp(start: BVector, end: BVector, t: float) -> BVector:
    """Great-circle interpolation between unit directions at fraction t.

    Raises:
        GradientTableError: For zero or antipodal endpoints (no unique geodesic).
    """
    a = start.as_array()
    b = end.as_array()
    if start.is_zero() or end.is_zero():
        raise GradientTableError("slerp endpoints must be nonzero directions")
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    cos_omega = float(np.clip(a @ b, -1.0, 1.0))
    if cos_omega < -1.0 + 1e-9:
        raise GradientTableError("slerp between antipodal directions is undefined")
    if t == 0.0:
        return BVector.from_array(a)
    if t == 1.0:
        return BVector.from_array(b)
    omega = math.acos(cos_omega)
    if omega < 1e-9:
        return BVector.from_array(a)
    sin_omega = math.sin(omega)
    out = (math.sin((1.0 - t) * omega) * a + math.sin(t * omega) * b) / sin_omega
    return BVector.from_array(out / np.linalg.norm(out))


def default_table(
    n_per_shell: int = 30,
    shells: Sequence[float] = (1000.0, 2000.0, 3000.0),
    n_b0: int = 0,
    seed: int = 0,
) -> GradientTable:
    """Multi-shell scheme with quasi-uniform hemisphere directions per shell.

    Each shell places `n_per_shell` points on a Fibonacci spiral over the
    upper hemisphere, rotated about z by a seeded random angle so the shells
    interleave. `n_b0` zero-direction b=0 entries are prepended.
    """
    if n_per_shell < 1:
        raise ValueError("n_per_shell must be at least 1")
    rng = np.random.default_rng(seed)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    entries = [
        GradientEntry(direction=BVector(x=0.0, y=0.0, z=0.0), bvalue=0.0) for _ in range(n_b0)
    ]
    i = np.arange(n_per_shell)
    z = 1.0 - (i + 0.5) / n_per_shell
    radius = np.sqrt(1.0 - z * z)
    for bvalue in shells:
        phi = i * golden + rng.uniform(0.0, 2.0 * math.pi)
        dirs = np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)
        for d in dirs:
            entries.append(GradientEntry(direction=BVector.from_array(d), bvalue=float(bvalue)))
    return GradientTable(entries=tuple(entries))
