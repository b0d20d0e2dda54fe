"""Exception hierarchy shared by every qspace_dwi module.

Each subsystem raises its own subclass so callers (and the CLI) can tell a
malformed gradient table from a corrupt checkpoint without string matching.
"""

from __future__ import annotations


class QSpaceError(Exception):
    """Base class for all domain errors raised by qspace_dwi."""


class DiffCoreError(QSpaceError):
    """Raised for invalid use of the differentiable-array primitives."""


class ShapeError(DiffCoreError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class NonFiniteError(DiffCoreError):
    """Raised when a forward value or gradient becomes NaN or infinite.

    Attributes:
        node: Name of the graph node where the non-finite value appeared.
    """

    def __init__(self, node: str, phase: str = "forward") -> None:
        self.node = node
        self.phase = phase
        super().__init__(f"non-finite {phase} value at node '{node}'")


class GradientTableError(QSpaceError):
    """Raised for malformed or inconsistent gradient tables."""


class VolumeFormatError(QSpaceError):
    """Raised when a QVOL container cannot be read or written."""


class PhantomSpecError(QSpaceError):
    """Raised for a phantom geometry that contains no tissue."""


class CheckpointError(QSpaceError):
    """Raised when a QCKPT001 checkpoint is corrupt or incompatible."""


class TrainingError(QSpaceError):
    """Raised when a training step produces a non-finite loss.

    Attributes:
        step: Step index at which the loss diverged.
        component: Name of the offending loss component.
    """

    def __init__(self, step: int, component: str) -> None:
        self.step = step
        self.component = component
        super().__init__(f"non-finite loss '{component}' at step {step}")


class RestorationError(QSpaceError):
    """Raised when kept acquisitions cannot be placed in the full table."""


class FitError(QSpaceError):
    """Raised when the tensor design matrix cannot be solved."""


class MetricError(QSpaceError):
    """Raised for shape or mask violations in image-quality metrics."""
