"""Tests for the alternating optimization loop.

Acceptance criteria:
- With d_update_period = 2, 100 steps update the discriminator 50 times and
  the generator 100 times
- Discriminator steps leave generator parameters untouched and vice versa
- Each discriminator step advances the spectral-norm state by one power iteration
- Zero loss weights leave the generator unchanged
- Runs are deterministic per seed; resuming in memory matches an uninterrupted run
- Non-finite losses raise TrainingError with the step index
- Loss curves are written as CSV with an empty d_loss on generator-only steps
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from qspace_dwi.exceptions import TrainingError
from qspace_dwi.models import (
    LOSS_CSV_HEADER,
    DiscriminatorConfig,
    GeneratorConfig,
    LossRecord,
    LossWeights,
    TrainConfig,
)
from qspace_dwi.networks import discriminator_forward
from qspace_dwi.phantom import PhantomSubject
from qspace_dwi.qspace import GradientTable
from qspace_dwi.training.samples import SamplePool
from qspace_dwi.training.trainer import (
    TrainState,
    discriminator_update,
    generator_update,
    init_train_state,
    run_training,
    train_step,
    write_loss_csv,
)
from tests.conftest import tiny_train_config

MICRO_GENERATOR = GeneratorConfig(base_width=2, depth=2, num_res_blocks=1, mlp_hidden_width=4)
MICRO_DISCRIMINATOR = DiscriminatorConfig(base_width=2, depth=2)


def _micro_config(**overrides: object) -> TrainConfig:
    fields: dict[str, object] = {
        "crop_size": 8,
        "generator": MICRO_GENERATOR,
        "discriminator": MICRO_DISCRIMINATOR,
    }
    fields.update(overrides)
    return tiny_train_config(**fields)


def _pool(
    subjects: list[PhantomSubject], table: GradientTable, config: TrainConfig
) -> SamplePool:
    return SamplePool([(s.structural, s.dwis) for s in subjects[:1]], table, config)


class TestUpdateCadence:
    """Test how often each network is updated."""

    def test_hundred_steps(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """Period 2 over 100 steps: 50 discriminator and 100 generator updates."""
        config = _micro_config(steps=100)
        pool = _pool(noiseless_subjects, small_table, config)
        state = init_train_state(config)
        digests = {"g": state.g_params.digest(), "d": state.d_params.digest()}
        changes = {"g": 0, "d": 0}

        def count(current: TrainState, _record: LossRecord) -> None:
            for key, params in (("g", current.g_params), ("d", current.d_params)):
                digest = params.digest()
                changes[key] += digest != digests[key]
                digests[key] = digest

        final, records = run_training(config, pool, state, on_step=count)

        assert final.step == 100
        assert changes == {"g": 100, "d": 50}
        assert sum(r.d_loss is not None for r in records) == 50
        assert final.g_params.step_count == 100
        assert final.d_params.step_count == 50

    def test_discriminator_runs_on_even_steps(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """Steps 0 and 2 of four carry a discriminator loss."""
        config = _micro_config(steps=4)

        _, records = run_training(config, _pool(noiseless_subjects, small_table, config))

        assert [r.step for r in records] == [0, 1, 2, 3]
        assert [r.d_loss is not None for r in records] == [True, False, True, False]

    def test_period_one(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """Period 1 updates the discriminator on every step."""
        config = _micro_config(steps=3, d_update_period=1)

        final, _ = run_training(config, _pool(noiseless_subjects, small_table, config))

        assert final.d_params.step_count == 3


class TestUpdateIsolation:
    """Test that each update touches only its own network."""

    def test_discriminator_step(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """A discriminator update changes D and its spectral state, never G."""
        config = _micro_config()
        batch = _pool(noiseless_subjects, small_table, config).batch_for_step(0)
        state = init_train_state(config)

        updated, d_loss = discriminator_update(batch, state, config)

        assert d_loss >= 0.0
        assert updated.g_params.digest() == state.g_params.digest()
        assert updated.d_params.digest() != state.d_params.digest()
        assert any(
            not np.array_equal(updated.sn_state[n], state.sn_state[n]) for n in state.sn_state
        )

    def test_one_power_iteration_per_discriminator_step(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """The real and fake passes share sigma; the stored state moves by one pass."""
        config = _micro_config()
        batch = _pool(noiseless_subjects, small_table, config).batch_for_step(0)
        state = init_train_state(config)
        real_x = np.concatenate([batch.structural, batch.targets], axis=1)
        _, once = discriminator_forward(
            real_x, batch.conditions, state.d_params, config.discriminator, state.sn_state
        )

        updated, _ = discriminator_update(batch, state, config)

        assert updated.sn_state.keys() == once.keys()
        assert all(np.array_equal(updated.sn_state[n], once[n]) for n in once)

    def test_generator_step(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """A generator update changes G only; D and the spectral state are kept."""
        config = _micro_config()
        batch = _pool(noiseless_subjects, small_table, config).batch_for_step(0)
        state = init_train_state(config)

        updated, (g_adv, g_l1, g_total) = generator_update(batch, state, config)

        assert updated.d_params is state.d_params
        assert updated.sn_state is state.sn_state
        assert updated.g_params.digest() != state.g_params.digest()
        assert g_total == pytest.approx(g_adv + 100.0 * g_l1, rel=1e-5)

    def test_zero_weights_freeze_generator(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """lambda_gan = lambda_l1 = 0 gives zero gradients and no parameter change."""
        config = _micro_config(steps=2, weights=LossWeights(lambda_gan=0.0, lambda_l1=0.0))
        state = init_train_state(config)

        final, _ = run_training(config, _pool(noiseless_subjects, small_table, config), state)

        assert final.g_params.digest() == state.g_params.digest()
        assert final.d_params.digest() != state.d_params.digest()


class TestReproducibility:
    """Test determinism and failure reporting."""

    def test_same_seed_same_curve(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """Two runs with the same seed produce identical losses and parameters."""
        config = _micro_config(steps=4, seed=3)

        first, first_records = run_training(config, _pool(noiseless_subjects, small_table, config))
        second, second_records = run_training(
            config, _pool(noiseless_subjects, small_table, config)
        )

        assert first_records == second_records
        assert first.g_params.digest() == second.g_params.digest()
        assert first.d_params.digest() == second.d_params.digest()

    def test_resume_matches_uninterrupted(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """Stopping at step 3 and continuing to 6 equals a straight 6-step run."""
        config = _micro_config(steps=6)
        pool = _pool(noiseless_subjects, small_table, config)

        straight, straight_records = run_training(config, pool)
        halfway, head = run_training(config, pool, steps=3)
        resumed, tail = run_training(config, pool, state=halfway)

        assert head + tail == straight_records
        assert resumed.g_params.digest() == straight.g_params.digest()
        assert resumed.d_params.digest() == straight.d_params.digest()

    def test_seeds_differ(self) -> None:
        """Different seeds initialize different networks."""
        a = init_train_state(_micro_config(seed=0))
        b = init_train_state(_micro_config(seed=1))

        assert a.g_params.digest() != b.g_params.digest()

    def test_non_finite_loss(
        self, noiseless_subjects: list[PhantomSubject], small_table: GradientTable
    ) -> None:
        """A NaN parameter surfaces as TrainingError at the current step."""
        config = _micro_config()
        batch = _pool(noiseless_subjects, small_table, config).batch_for_step(0)
        state = init_train_state(config)
        bias = np.full(1, np.nan, dtype=np.float32)
        broken = replace(state, g_params=state.g_params.with_values("gen.head.bias", bias))

        with np.errstate(invalid="ignore"), pytest.raises(TrainingError) as excinfo:
            train_step(batch, broken, config)

        assert excinfo.value.step == 0
        assert "non-finite loss" in str(excinfo.value)


class TestLossCsv:
    """Test the loss-curve file."""

    def test_header_and_rows(self, tmp_path: Path) -> None:
        """One header line, then one row per record; d_loss empty when absent."""
        records = [
            LossRecord(step=0, g_adv=0.5, g_l1=0.1, g_total=10.5, d_loss=0.4),
            LossRecord(step=1, g_adv=0.25, g_l1=0.1, g_total=10.25),
        ]
        path = tmp_path / "logs" / "loss.csv"

        write_loss_csv(records, path)

        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == LOSS_CSV_HEADER == "step,g_adv,g_l1,g_total,d_loss"
        assert lines[1] == "0,0.5,0.1,10.5,0.4"
        assert lines[2] == "1,0.25,0.1,10.25,"

    def test_append_keeps_single_header(self, tmp_path: Path) -> None:
        """Appending adds rows without repeating the header."""
        path = tmp_path / "loss.csv"
        record = LossRecord(step=0, g_adv=0.5, g_l1=0.1, g_total=10.5)

        write_loss_csv([record], path)
        write_loss_csv([record.model_copy(update={"step": 1})], path, append=True)

        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines.count(LOSS_CSV_HEADER) == 1
        assert len(lines) == 3
