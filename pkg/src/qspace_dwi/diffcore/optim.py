"""Adam optimizer as a pure function of (params, grads, state)."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from qspace_dwi.diffcore.array import FloatArray, ParamSet
from qspace_dwi.exceptions import ShapeError


@dataclass
class AdamState:
    """Adam moments and hyperparameters.

    Attributes:
        first_moment: Per-parameter running mean of gradients.
        second_moment: Per-parameter running mean of squared gradients.
        beta1: Decay of the first moment, in (0, 1).
        beta2: Decay of the second moment, in (0, 1).
        epsilon: Denominator stabilizer.
        learning_rate: Step size.
    """

    learning_rate: float
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: dict[str, FloatArray] = field(default_factory=dict[str, FloatArray])
    second_moment: dict[str, FloatArray] = field(default_factory=dict[str, FloatArray])

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    @classmethod
    def for_params(
        cls,
        params: ParamSet,
        learning_rate: float,
        beta1: float = 0.5,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> AdamState:
        """Zero moments shaped like `params`."""
        arrays = params.arrays()
        return cls(
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            first_moment={n: np.zeros_like(v) for n, v in arrays.items()},
            second_moment={n: np.zeros_like(v) for n, v in arrays.items()},
        )


def adam_step(
    params: ParamSet, grads: Mapping[str, FloatArray], state: AdamState
) -> tuple[ParamSet, AdamState]:
    """Apply one bias-corrected Adam update.

    Returns new objects; the inputs are left untouched.

    Raises:
        ShapeError: If a gradient is missing or its shape differs from the parameter.
    """
    t = params.step_count + 1
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    new_values: dict[str, FloatArray] = {}
    new_m: dict[str, FloatArray] = {}
    new_v: dict[str, FloatArray] = {}
    for name, value in params.arrays().items():
        g = grads.get(name)
        if g is None or g.shape != value.shape:
            got = None if g is None else g.shape
            raise ShapeError(f"gradient shape mismatch for '{name}': {got} vs {value.shape}")
        g = g.astype(value.dtype, copy=False)
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_values[name] = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        first_moment=new_m,
        second_moment=new_v,
    )
    return ParamSet.from_arrays(new_values, step_count=t), new_state
