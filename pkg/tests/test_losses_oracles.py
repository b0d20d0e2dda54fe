"""Tests for the least-squares adversarial and L1 translation losses.

Acceptance criteria:
- All scores 0.5: D loss 0.5, G adversarial loss 0.25
- A perfect discriminator has zero loss; one wrong real pixel costs 0.5 / (H * W)
- L1 uses the DWI target for l > 0 and the B0 target for l = 0
- Total loss with weights (1, 100), adv 0.25 and L1 0.02 is 2.25
- Losses are non-negative; G gradients push fake scores toward 1
"""

from __future__ import annotations

import numpy as np
import pytest

from qspace_dwi.diffcore.array import DiffArray, ParamSet, evaluate_with_gradients
from qspace_dwi.exceptions import ShapeError
from qspace_dwi.losses import (
    l1_translation_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    total_generator_loss,
)
from qspace_dwi.models import LossWeights
from qspace_dwi.networks.discriminator import DiscriminatorOutput

H, W = 4, 5


def _scores(
    global_score: float | np.ndarray, pixels: float | np.ndarray, n: int = 2
) -> DiscriminatorOutput:
    g = np.broadcast_to(np.asarray(global_score, dtype=np.float64), (n,)).copy()
    p = np.broadcast_to(np.asarray(pixels, dtype=np.float64), (n, H, W)).copy()
    return DiscriminatorOutput(
        global_score=DiffArray.constant(g),
        pixel_scores=DiffArray.constant(p),
        global_features=DiffArray.constant(np.zeros((n, 3))),
    )


class TestLsganLosses:
    """Test the discriminator and generator adversarial terms."""

    def test_uninformative_scores(self) -> None:
        """Every score 0.5 gives D loss 0.5 and G loss 0.25."""
        out = _scores(0.5, 0.5)

        assert lsgan_d_loss(out, out).item() == pytest.approx(0.5)
        assert lsgan_g_loss(out).item() == pytest.approx(0.25)

    def test_perfect_discriminator(self) -> None:
        """Real scored 1 and fake scored 0 everywhere costs nothing."""
        assert lsgan_d_loss(_scores(1.0, 1.0), _scores(0.0, 0.0)).item() == 0.0

    def test_single_wrong_pixel(self) -> None:
        """One real pixel scored 0 on a single-sample batch costs 0.5 / (H * W)."""
        pixels = np.ones((1, H, W))
        pixels[0, 2, 3] = 0.0

        loss = lsgan_d_loss(_scores(1.0, pixels, n=1), _scores(0.0, 0.0, n=1))

        assert loss.item() == pytest.approx(0.5 / (H * W))

    def test_generator_targets(self) -> None:
        """Fakes scored 1 give G loss 0; fakes scored 0 give 1."""
        assert lsgan_g_loss(_scores(1.0, 1.0)).item() == 0.0
        assert lsgan_g_loss(_scores(0.0, 0.0)).item() == pytest.approx(1.0)

    def test_pixel_shape_mismatch(self) -> None:
        """Real and fake pixel maps must agree."""
        with pytest.raises(ShapeError, match="pixel maps differ"):
            lsgan_d_loss(_scores(1.0, 1.0, n=2), _scores(0.0, 0.0, n=1))

    def test_non_negative(self, rng: np.random.Generator) -> None:
        """Random scores never give negative losses."""
        for _ in range(50):
            real = _scores(rng.standard_normal(2), rng.standard_normal((2, H, W)))
            fake = _scores(rng.standard_normal(2), rng.standard_normal((2, H, W)))

            assert lsgan_d_loss(real, fake).item() >= 0.0
            assert lsgan_g_loss(fake).item() >= 0.0

    def test_generator_gradient_pushes_toward_one(self, rng: np.random.Generator) -> None:
        """dL_G/ds is negative for fake scores below 1 and positive above."""
        params = ParamSet.from_arrays(
            {
                "global": rng.uniform(-1.0, 0.5, 3),
                "pixels": np.concatenate(
                    [rng.uniform(-1.0, 0.5, (1, H, W)), rng.uniform(1.5, 3.0, (2, H, W))]
                ),
            }
        )
        fake = DiscriminatorOutput(
            global_score=params["global"],
            pixel_scores=params["pixels"],
            global_features=DiffArray.constant(np.zeros((3, 2))),
        )

        grads = evaluate_with_gradients(lsgan_g_loss(fake), params)

        assert np.all(grads["global"] < 0.0)
        assert np.all(grads["pixels"][0] < 0.0)
        assert np.all(grads["pixels"][1:] > 0.0)


class TestL1TranslationLoss:
    """Test the pixel-wise translation term."""

    def test_exact_prediction(self, rng: np.random.Generator) -> None:
        """Predicting the DWI target exactly costs 0 for l > 0."""
        target = rng.uniform(0.0, 1.0, (2, 1, H, W))

        loss = l1_translation_loss(DiffArray.constant(target), target, np.ones_like(target), 0.5)

        assert loss.item() == 0.0

    def test_zero_bvalue_uses_b0_target(self, rng: np.random.Generator) -> None:
        """At l = 0 the B0 slice is the target, whatever the DWI."""
        b0 = rng.uniform(0.0, 1.0, (1, 1, H, W))
        dwi = rng.uniform(0.0, 1.0, (1, 1, H, W))

        assert l1_translation_loss(DiffArray.constant(b0), dwi, b0, 0.0).item() == 0.0
        assert l1_translation_loss(DiffArray.constant(dwi), dwi, b0, 0.0).item() > 0.0

    def test_constant_offset(self, rng: np.random.Generator) -> None:
        """A +0.1 offset everywhere gives L1 = 0.1."""
        target = rng.uniform(0.0, 1.0, (2, 1, H, W))

        loss = l1_translation_loss(DiffArray.constant(target + 0.1), target, target, 1.0)

        assert loss.item() == pytest.approx(0.1)

    def test_per_sample_bvalues(self) -> None:
        """Each sample picks its own target from its b-value."""
        dwi = np.zeros((2, 1, H, W))
        b0 = np.ones((2, 1, H, W))
        pred = DiffArray.constant(np.zeros((2, 1, H, W)))

        loss = l1_translation_loss(pred, dwi, b0, np.array([1000.0, 0.0]))

        assert loss.item() == pytest.approx(0.5)

    def test_shape_mismatch(self) -> None:
        """Prediction and targets must have the same shape."""
        pred = DiffArray.constant(np.zeros((1, 1, H, W)))

        with pytest.raises(ShapeError, match="l1"):
            l1_translation_loss(pred, np.zeros((1, 1, H, H)), np.zeros((1, 1, H, W)), 1.0)
        with pytest.raises(ShapeError, match="b-values for a batch"):
            l1_translation_loss(pred, np.zeros((1, 1, H, W)), np.zeros((1, 1, H, W)), [1.0, 2.0])


class TestTotalGeneratorLoss:
    """Test the weighted sum."""

    def test_default_weights(self) -> None:
        """(lambda_gan, lambda_l1) = (1, 100): 0.25 + 100 * 0.02 = 2.25."""
        total = total_generator_loss(0.25, 0.02, LossWeights(lambda_gan=1.0, lambda_l1=100.0))

        assert total.item() == pytest.approx(2.25, rel=1e-6)

    def test_l1_only(self) -> None:
        """lambda_gan = 0 removes the adversarial term."""
        total = total_generator_loss(0.7, 0.02, LossWeights(lambda_gan=0.0, lambda_l1=100.0))

        assert total.item() == pytest.approx(2.0, rel=1e-6)
