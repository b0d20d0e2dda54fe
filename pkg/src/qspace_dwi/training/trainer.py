"""Alternating GAN optimization.

Each step runs one generator update; every ``d_update_period`` steps (when
step % period == 0) a discriminator update runs first, on generator outputs
detached from the generator graph. A run is a pure function of config, data
and seed: parameters are initialized from default_rng(seed), batches depend
only on the step index (see SamplePool), so resuming from a checkpoint at
step t reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from qspace_dwi.diffcore.array import DiffArray, FloatArray, ParamSet, evaluate_with_gradients
from qspace_dwi.diffcore.ops import concat
from qspace_dwi.diffcore.optim import AdamState, adam_step
from qspace_dwi.exceptions import NonFiniteError, TrainingError
from qspace_dwi.losses import (
    l1_translation_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    total_generator_loss,
)
from qspace_dwi.models import LOSS_CSV_HEADER, LossRecord, TrainConfig
from qspace_dwi.networks.discriminator import (
    SpectralState,
    discriminator_forward,
    init_discriminator,
)
from qspace_dwi.networks.generator import generator_forward, init_generator
from qspace_dwi.training.checkpoint import CheckpointData
from qspace_dwi.training.samples import Batch, SamplePool

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    """Mutable-by-replacement training state; `step` is the next step index."""

    g_params: ParamSet
    d_params: ParamSet
    g_opt: AdamState
    d_opt: AdamState
    sn_state: SpectralState
    step: int = 0

    def to_checkpoint(self, config: TrainConfig, max_bvalue: float) -> CheckpointData:
        return CheckpointData(
            config=config,
            max_bvalue=max_bvalue,
            step=self.step,
            g_params=self.g_params,
            d_params=self.d_params,
            g_opt=self.g_opt,
            d_opt=self.d_opt,
            sn_state=self.sn_state,
        )

    @classmethod
    def from_checkpoint(cls, data: CheckpointData) -> TrainState:
        return cls(
            g_params=data.g_params,
            d_params=data.d_params,
            g_opt=data.g_opt,
            d_opt=data.d_opt,
            sn_state=data.sn_state,
            step=data.step,
        )


def init_train_state(config: TrainConfig) -> TrainState:
    """Fresh parameters and zeroed optimizer moments from config.seed."""
    rng = np.random.default_rng(config.seed)
    g_params = init_generator(config.generator, rng)
    d_params, sn_state = init_discriminator(
        config.discriminator, config.generator.input_channels + 1, rng
    )
    return TrainState(
        g_params=g_params,
        d_params=d_params,
        g_opt=AdamState.for_params(g_params, config.lr_g, config.beta1, config.beta2),
        d_opt=AdamState.for_params(d_params, config.lr_d, config.beta1, config.beta2),
        sn_state=sn_state,
    )


def _finite(value: DiffArray, step: int, component: str) -> float:
    scalar = value.item()
    if not math.isfinite(scalar):
        raise TrainingError(step, component)
    return scalar


def _gradients(
    loss: DiffArray, params: ParamSet, step: int, component: str
) -> dict[str, FloatArray]:
    try:
        return evaluate_with_gradients(loss, params)
    except NonFiniteError as e:
        raise TrainingError(step, component) from e


def discriminator_update(
    batch: Batch, state: TrainState, config: TrainConfig
) -> tuple[TrainState, float]:
    """One discriminator step on real slices vs detached generator outputs."""
    step = state.step
    fake = generator_forward(
        batch.structural, batch.conditions, state.g_params.frozen(), config.generator
    ).detach()
    real_x = np.concatenate([batch.structural, batch.targets], axis=1)
    fake_x = np.concatenate([batch.structural, fake.values], axis=1)
    # Both passes normalize with the same sigma; power iteration advances once per D step
    real_out, advanced = discriminator_forward(
        real_x, batch.conditions, state.d_params, config.discriminator, state.sn_state
    )
    fake_out, _ = discriminator_forward(
        fake_x, batch.conditions, state.d_params, config.discriminator, state.sn_state
    )
    d_loss = lsgan_d_loss(real_out, fake_out)
    d_value = _finite(d_loss, step, "d_loss")
    grads = _gradients(d_loss, state.d_params, step, "d_loss")
    d_params, d_opt = adam_step(state.d_params, grads, state.d_opt)
    return replace(state, d_params=d_params, d_opt=d_opt, sn_state=advanced), d_value


def generator_update(
    batch: Batch, state: TrainState, config: TrainConfig
) -> tuple[TrainState, tuple[float, float, float]]:
    """One generator step; returns (g_adv, g_l1, g_total)."""
    step = state.step
    pred = generator_forward(batch.structural, batch.conditions, state.g_params, config.generator)
    l1 = l1_translation_loss(pred, batch.targets, batch.targets_b0, batch.l_norm)
    fake_x = concat([DiffArray.constant(batch.structural, name="structural"), pred], axis=1)
    fake_out, _ = discriminator_forward(
        fake_x, batch.conditions, state.d_params.frozen(), config.discriminator, state.sn_state
    )
    adv = lsgan_g_loss(fake_out)
    total = total_generator_loss(adv, l1, config.weights)
    values = (
        _finite(adv, step, "g_adv"),
        _finite(l1, step, "g_l1"),
        _finite(total, step, "g_total"),
    )
    grads = _gradients(total, state.g_params, step, "g_total")
    g_params, g_opt = adam_step(state.g_params, grads, state.g_opt)
    return replace(state, g_params=g_params, g_opt=g_opt), values


def train_step(
    batch: Batch, state: TrainState, config: TrainConfig
) -> tuple[TrainState, LossRecord]:
    """Run step `state.step`: optional discriminator update, then the generator update.

    Raises:
        ValueError: If the batch is empty.
        TrainingError: If any loss component becomes non-finite.
    """
    if batch.size == 0:
        raise ValueError("empty batch")
    d_value: float | None = None
    if state.step % config.d_update_period == 0:
        state, d_value = discriminator_update(batch, state, config)
    state, (g_adv, g_l1, g_total) = generator_update(batch, state, config)
    record = LossRecord(step=state.step, g_adv=g_adv, g_l1=g_l1, g_total=g_total, d_loss=d_value)
    return replace(state, step=state.step + 1), record


def run_training(
    config: TrainConfig,
    pool: SamplePool,
    state: TrainState | None = None,
    steps: int | None = None,
    on_step: Callable[[TrainState, LossRecord], None] | None = None,
) -> tuple[TrainState, list[LossRecord]]:
    """Train until `steps` (default config.steps) total steps have run.

    Args:
        config: Training configuration.
        pool: Training samples.
        state: State to resume from (fresh init when None).
        steps: Total step count to reach.
        on_step: Optional callback after every step.

    Returns:
        Final state and the loss records of the steps run here.
    """
    state = state if state is not None else init_train_state(config)
    last = config.steps if steps is None else steps
    records: list[LossRecord] = []
    if state.step < last:
        logger.info(f"Training steps {state.step}..{last - 1} (batch {config.batch_size})")
    while state.step < last:
        state, record = train_step(pool.batch_for_step(state.step), state, config)
        records.append(record)
        if on_step is not None:
            on_step(state, record)
        if record.step % config.log_every == 0 or state.step == last:
            d_text = "-" if record.d_loss is None else f"{record.d_loss:.4f}"
            logger.info(
                f"step {record.step}: g_total={record.g_total:.4f} "
                f"g_adv={record.g_adv:.4f} g_l1={record.g_l1:.4f} d={d_text}"
            )
    return state, records


def write_loss_csv(records: list[LossRecord], path: Path, append: bool = False) -> None:
    """Write loss records as CSV `step,g_adv,g_l1,g_total,d_loss` (d_loss empty on G-only steps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not append or not path.exists()
    with open(path, "w" if new_file else "a", encoding="utf-8") as f:
        if new_file:
            f.write(LOSS_CSV_HEADER + "\n")
        for record in records:
            f.write(record.csv_row() + "\n")
