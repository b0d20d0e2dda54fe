"""Shared fixtures: tiny network configs and a small noiseless phantom.

Everything here is sized so a full forward/backward pass on a 16x16 slice
takes milliseconds.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from qspace_dwi.diffcore.array import DiffArray, ParamSet, evaluate_with_gradients
from qspace_dwi.models import DiscriminatorConfig, GeneratorConfig, PhantomSpec, TrainConfig
from qspace_dwi.phantom import PhantomSubject, generate_phantom_dataset
from qspace_dwi.qspace import GradientTable, default_table

TINY_GENERATOR = GeneratorConfig(base_width=4, depth=2, num_res_blocks=1, mlp_hidden_width=8)
TINY_DISCRIMINATOR = DiscriminatorConfig(base_width=4, depth=2)

LossFn = Callable[[ParamSet], DiffArray]


def finite_difference_check(
    loss_fn: LossFn,
    params: ParamSet,
    rng: np.random.Generator,
    entries_per_tensor: int = 3,
    step: float = 1e-6,
) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    A few random entries of every parameter tensor are probed; params must be float64.
    """
    analytic = evaluate_with_gradients(loss_fn(params), params)
    worst = 0.0
    for name, values in params.arrays().items():
        flat = values.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        for k in picks:
            plus, minus = flat.copy(), flat.copy()
            plus[k] += step
            minus[k] -= step
            f_plus = loss_fn(params.with_values(name, plus.reshape(values.shape))).item()
            f_minus = loss_fn(params.with_values(name, minus.reshape(values.shape))).item()
            numeric = (f_plus - f_minus) / (2 * step)
            exact = float(analytic[name].reshape(-1)[k])
            scale = max(abs(numeric), abs(exact), 1e-5)
            worst = max(worst, abs(numeric - exact) / scale)
    return worst


def tiny_train_config(**overrides: object) -> TrainConfig:
    """Desk-sized TrainConfig for fast tests; keyword overrides replace fields."""
    fields: dict[str, object] = {
        "batch_size": 2,
        "crop_size": 16,
        "steps": 4,
        "log_every": 1000,
        "generator": TINY_GENERATOR,
        "discriminator": TINY_DISCRIMINATOR,
    }
    fields.update(overrides)
    return TrainConfig.model_validate(fields)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return tiny_train_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_table() -> GradientTable:
    """Two shells of six directions each."""
    return default_table(n_per_shell=6, shells=(1000.0, 2000.0), seed=3)


@pytest.fixture(scope="session")
def noiseless_spec() -> PhantomSpec:
    return PhantomSpec(dims=(16, 16, 16), n_subjects=3, n_val=1, n_test=1, noise_fraction=0.0)


@pytest.fixture(scope="session")
def noiseless_subjects(
    noiseless_spec: PhantomSpec, small_table: GradientTable
) -> list[PhantomSubject]:
    return generate_phantom_dataset(noiseless_spec, small_table, seed=7)
