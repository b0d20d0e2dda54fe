"""Differentiable dense arrays with reverse-mode gradients.

A DiffArray wraps a numpy raster and, when it was produced by an operation,
remembers its parents and a vector-Jacobian product closure. Gradients are
obtained by `evaluate_with_gradients`, which walks the recorded graph once in
reverse topological order.

Values are 32-bit floats unless the caller explicitly hands in a float64
raster (gradient oracles do this; production code never does).
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from qspace_dwi.exceptions import NonFiniteError, ShapeError

FloatArray = NDArray[np.floating[Any]]
VJP = Callable[[FloatArray], Sequence[FloatArray | None]]


def _as_float(values: ArrayLike) -> FloatArray:
    # Python scalars must not promote float32 graphs to float64
    if isinstance(values, (int, float)):
        return np.asarray(values, dtype=np.float32)
    arr = np.asarray(values)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(np.float32)


def unbroadcast(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class DiffArray:
    """N-d float raster that records how it was computed.

    Attributes:
        values: The forward raster (float32, or float64 inside oracles).
        grad: Gradient raster filled in by `evaluate_with_gradients`, same shape.
        name: Node name used in error reports (parameter name for leaves).
        requires_grad: Whether gradients should flow into this node.
    """

    __slots__ = ("values", "grad", "name", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        values: ArrayLike,
        *,
        name: str = "const",
        requires_grad: bool = False,
        parents: tuple[DiffArray, ...] = (),
        vjp: VJP | None = None,
    ) -> None:
        self.values: FloatArray = _as_float(values)
        self.grad: FloatArray | None = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @classmethod
    def constant(cls, values: ArrayLike, name: str = "const") -> DiffArray:
        """Wrap a raster that gradients never flow into."""
        return cls(values, name=name)

    @classmethod
    def parameter(cls, values: ArrayLike, name: str) -> DiffArray:
        """Create a named leaf that receives gradients."""
        return cls(values, name=name, requires_grad=True)

    @classmethod
    def from_op(
        cls,
        values: ArrayLike,
        name: str,
        parents: tuple[DiffArray, ...],
        vjp: VJP,
    ) -> DiffArray:
        """Create an interior node; it tracks gradients only if a parent does."""
        tracked = any(p.requires_grad for p in parents)
        return cls(
            values,
            name=name,
            requires_grad=tracked,
            parents=parents if tracked else (),
            vjp=vjp if tracked else None,
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.values.dtype

    @property
    def parents(self) -> tuple[DiffArray, ...]:
        return self._parents

    def detach(self) -> DiffArray:
        """Return a constant copy that blocks gradient flow."""
        return DiffArray(self.values.copy(), name=f"{self.name}.detached")

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"DiffArray(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"

    # Arithmetic operators delegate to the broadcasting primitives below.
    def __add__(self, other: DiffArray | ArrayLike) -> DiffArray:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> DiffArray:
        return add(other, self)

    def __sub__(self, other: DiffArray | ArrayLike) -> DiffArray:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> DiffArray:
        return sub(other, self)

    def __mul__(self, other: DiffArray | ArrayLike) -> DiffArray:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> DiffArray:
        return mul(other, self)

    def __truediv__(self, other: DiffArray | ArrayLike) -> DiffArray:
        return div(self, other)

    def __neg__(self) -> DiffArray:
        return mul(self, -1.0)


def as_diff(x: DiffArray | ArrayLike, name: str = "const") -> DiffArray:
    """Return `x` unchanged if it is a DiffArray, else wrap it as a constant."""
    if isinstance(x, DiffArray):
        return x
    return DiffArray.constant(x, name=name)


def add(a: DiffArray | ArrayLike, b: DiffArray | ArrayLike) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out = a.values + b.values

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return DiffArray.from_op(out, "add", (a, b), vjp)


def sub(a: DiffArray | ArrayLike, b: DiffArray | ArrayLike) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out = a.values - b.values

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return DiffArray.from_op(out, "sub", (a, b), vjp)


def mul(a: DiffArray | ArrayLike, b: DiffArray | ArrayLike) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out = a.values * b.values

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        ga = unbroadcast(g * b.values, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.values, b.shape) if b.requires_grad else None
        return ga, gb

    return DiffArray.from_op(out, "mul", (a, b), vjp)


def div(a: DiffArray | ArrayLike, b: DiffArray | ArrayLike) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out = a.values / b.values

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        ga = unbroadcast(g / b.values, a.shape) if a.requires_grad else None
        gb = (
            unbroadcast(-g * a.values / (b.values * b.values), b.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return DiffArray.from_op(out, "div", (a, b), vjp)


@dataclass
class ParamSet:
    """Named parameter collection.

    Names are unique dotted strings; iteration is always lexicographic so
    initialization, serialization and digests never depend on insertion order.

    Attributes:
        entries: Map from dotted name to leaf DiffArray.
        step_count: Number of optimizer steps applied so far.
    """

    entries: dict[str, DiffArray] = field(default_factory=dict[str, DiffArray])
    step_count: int = 0

    def __post_init__(self) -> None:
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")
        self.entries = {name: self.entries[name] for name in sorted(self.entries)}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, ArrayLike], step_count: int = 0) -> ParamSet:
        return cls(
            {name: DiffArray.parameter(np.array(v), name) for name, v in arrays.items()},
            step_count=step_count,
        )

    def __getitem__(self, name: str) -> DiffArray:
        return self.entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def arrays(self) -> dict[str, FloatArray]:
        return {name: leaf.values for name, leaf in self.entries.items()}

    def num_parameters(self) -> int:
        return sum(leaf.size for leaf in self.entries.values())

    def astype(self, dtype: type[np.floating[Any]]) -> ParamSet:
        """Copy with every raster cast to `dtype` (oracles use float64)."""
        return ParamSet.from_arrays(
            {n: v.astype(dtype) for n, v in self.arrays().items()}, self.step_count
        )

    def with_values(self, name: str, values: ArrayLike) -> ParamSet:
        """Copy with one entry replaced."""
        arrays = {n: v.copy() for n, v in self.arrays().items()}
        arrays[name] = np.asarray(values, dtype=arrays[name].dtype)
        return ParamSet.from_arrays(arrays, self.step_count)

    def frozen(self) -> ParamSet:
        """Same values as constants, so a forward pass records no graph into them."""
        return ParamSet(
            {n: DiffArray.constant(leaf.values, name=n) for n, leaf in self.entries.items()},
            self.step_count,
        )

    def subset(self, prefix: str) -> ParamSet:
        return ParamSet(
            {n: leaf for n, leaf in self.entries.items() if n.startswith(prefix)},
            self.step_count,
        )

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes (order independent of insertion)."""
        h = hashlib.sha256()
        for name, leaf in self.entries.items():
            h.update(name.encode())
            h.update(str(leaf.shape).encode())
            h.update(np.ascontiguousarray(leaf.values).tobytes())
        return h.hexdigest()


def _topological_order(root: DiffArray) -> list[DiffArray]:
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def evaluate_with_gradients(graph_output: DiffArray, params: ParamSet) -> dict[str, FloatArray]:
    """Back-propagate from a scalar output to every parameter.

    Args:
        graph_output: Scalar result of a completed forward pass.
        params: Parameters whose leaves were used in the forward pass.

    Returns:
        Map from parameter name to gradient raster. Parameters the output does
        not depend on receive zeros.

    Raises:
        ShapeError: If the output is not a scalar.
        NonFiniteError: If any forward value or gradient on the path is not finite.
    """
    if graph_output.size != 1:
        raise ShapeError(f"gradient requested for non-scalar output of shape {graph_output.shape}")

    order = _topological_order(graph_output) if graph_output.requires_grad else []
    for node in order:
        if not np.all(np.isfinite(node.values)):
            raise NonFiniteError(node.name, "forward")

    grads: dict[int, FloatArray] = {}
    if order:
        grads[id(graph_output)] = np.ones_like(graph_output.values)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:  # pyright: ignore[reportPrivateUsage]
            continue
        parent_grads = node._vjp(g)  # pyright: ignore[reportPrivateUsage]
        for parent, pg in zip(node.parents, parent_grads, strict=True):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(node.name, "backward")
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
        if node.parents:
            del grads[id(node)]

    result: dict[str, FloatArray] = {}
    for name, leaf in params.entries.items():
        g = grads.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.values) if g is None else g.astype(leaf.dtype, copy=False)
        result[name] = leaf.grad
    return result
