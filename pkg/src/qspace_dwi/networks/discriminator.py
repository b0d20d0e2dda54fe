"""Conditional U-Net discriminator with projection heads.

The encoder downsamples the 4-channel input (structural channels plus a real
or generated DWI) and averages the bottleneck into a global feature vector.
The decoder upsamples back to full resolution through skip connections and
yields a feature vector per pixel. Both are scored by a projection head

    f(phi, b) = b^T V phi + psi(phi)

where psi is an affine map to a scalar. The pixel head is shared by all
pixels. Every convolution weight is spectrally normalized; the projection
heads are not.

Spectral-norm power-iteration vectors are explicit state: the forward pass
takes the current vectors and returns advanced ones, and the caller decides
whether to keep them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from qspace_dwi.diffcore import ops, spectral
from qspace_dwi.diffcore.array import DiffArray, FloatArray, ParamSet, as_diff
from qspace_dwi.exceptions import ShapeError
from qspace_dwi.models import CONDITION_DIM, DiscriminatorConfig
from qspace_dwi.networks.common import ConditionInput, check_spatial, condition_matrix, he_normal

logger = logging.getLogger(__name__)

PREFIX = "disc."
SpectralState = dict[str, FloatArray]


@dataclass
class ProjectionHead:
    """Projection head parameters.

    Attributes:
        V: Condition embedding [F, 4].
        psi_weight: Unconditional scalar map [1, F].
        psi_bias: [1].
    """

    V: DiffArray
    psi_weight: DiffArray
    psi_bias: DiffArray

    @classmethod
    def from_params(cls, params: ParamSet, name: str) -> ProjectionHead:
        key = f"{PREFIX}{name}"
        return cls(params[f"{key}.V"], params[f"{key}.psi.weight"], params[f"{key}.psi.bias"])

    def check(self, features: int) -> None:
        if self.V.shape != (features, CONDITION_DIM) or self.psi_weight.shape != (1, features):
            raise ShapeError(
                f"projection head V {self.V.shape} / psi {self.psi_weight.shape} "
                f"does not match feature width {features}"
            )


@dataclass
class DiscriminatorOutput:
    """Scores for a batch.

    Attributes:
        global_score: [N] encoder-branch realism.
        pixel_scores: [N, H, W] decoder-branch realism.
        global_features: [N, F] pooled bottleneck features.
    """

    global_score: DiffArray
    pixel_scores: DiffArray
    global_features: DiffArray


def _width(config: DiscriminatorConfig, level: int) -> int:
    return config.base_width * 2**level


def conv_names(config: DiscriminatorConfig) -> list[str]:
    """Names of every spectrally normalized convolution weight."""
    names = [f"{PREFIX}enc0.weight"]
    names += [f"{PREFIX}enc{d}.weight" for d in range(1, config.depth + 1)]
    names += [f"{PREFIX}dec{d}.weight" for d in range(config.depth, 0, -1)]
    return names


def init_discriminator(
    config: DiscriminatorConfig, in_channels: int, rng: np.random.Generator
) -> tuple[ParamSet, SpectralState]:
    """Fresh discriminator parameters and spectral-norm state vectors."""
    arrays: dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int) -> None:
        arrays[f"{PREFIX}{name}.weight"] = he_normal(rng, (c_out, c_in, 3, 3), c_in * 9)
        arrays[f"{PREFIX}{name}.bias"] = np.zeros(c_out, dtype=np.float32)

    conv("enc0", _width(config, 0), in_channels)
    for d in range(1, config.depth + 1):
        conv(f"enc{d}", _width(config, d), _width(config, d - 1))
    for d in range(config.depth, 0, -1):
        conv(f"dec{d}", _width(config, d - 1), _width(config, d) + _width(config, d - 1))

    for name, features in (("global", _width(config, config.depth)), ("pixel", _width(config, 0))):
        arrays[f"{PREFIX}{name}.V"] = rng.uniform(-0.1, 0.1, (features, CONDITION_DIM)).astype(
            np.float32
        )
        arrays[f"{PREFIX}{name}.psi.weight"] = he_normal(rng, (1, features), features)
        arrays[f"{PREFIX}{name}.psi.bias"] = np.zeros(1, dtype=np.float32)

    params = ParamSet.from_arrays(arrays)
    state = {name: spectral.init_state(params[name].shape[0], rng) for name in conv_names(config)}
    logger.debug(f"Initialized discriminator with {params.num_parameters()} parameters")
    return params, state


def project_condition(phi: DiffArray, b: ConditionInput, head: ProjectionHead) -> DiffArray:
    """Projection score b^T V phi + psi(phi) for features phi [N, F].

    Raises:
        ShapeError: If the head does not match the feature width or batch.
    """
    if phi.ndim != 2:
        raise ShapeError(f"projection expects features [N, F], got {phi.shape}")
    n, features = phi.shape
    head.check(features)
    cond = DiffArray.constant(condition_matrix(b, n), name="condition")
    embedded = ops.linear(cond, head.V)
    projection = ops.sum_(embedded * phi, axis=1)
    psi = ops.reshape(ops.linear(phi, head.psi_weight, head.psi_bias), (n,))
    return projection + psi


def project_pixels(phi: DiffArray, b: ConditionInput, head: ProjectionHead) -> DiffArray:
    """Shared per-pixel projection for features phi [N, F, H, W] -> [N, H, W]."""
    if phi.ndim != 4:
        raise ShapeError(f"pixel projection expects [N, F, H, W], got {phi.shape}")
    n, features, h, w = phi.shape
    head.check(features)
    cond = DiffArray.constant(condition_matrix(b, n), name="condition")
    embedded = ops.reshape(ops.linear(cond, head.V), (n, features, 1, 1))
    projection = ops.sum_(phi * embedded, axis=1)
    psi_kernel = ops.reshape(head.psi_weight, (1, features, 1, 1))
    psi = ops.conv2d(phi, psi_kernel, head.psi_bias, name=f"{PREFIX}pixel.psi")
    psi = ops.reshape(psi, (n, h, w))
    return projection + psi


def normalized_weights(
    params: ParamSet, state: SpectralState, config: DiscriminatorConfig
) -> tuple[dict[str, DiffArray], SpectralState]:
    """Spectrally normalize every conv weight; returns weights and advanced state."""
    weights: dict[str, DiffArray] = {}
    advanced: SpectralState = {}
    for name in conv_names(config):
        if name not in state:
            raise ShapeError(f"missing spectral-norm state for '{name}'")
        weights[name], advanced[name] = spectral.spectral_normalize(
            params[name], state[name], config.power_iters
        )
    return weights, advanced


def discriminator_forward(
    x: DiffArray | np.ndarray,
    b: ConditionInput,
    params: ParamSet,
    config: DiscriminatorConfig,
    state: SpectralState,
) -> tuple[DiscriminatorOutput, SpectralState]:
    """Score a batch of 4-channel slices.

    Args:
        x: Slices [N, C, H, W]: structural channels followed by the DWI.
        b: One condition for the batch or one per sample.
        params: Discriminator parameters.
        config: Discriminator architecture.
        state: Spectral-norm vectors keyed by conv weight name.

    Returns:
        (scores, advanced spectral-norm state).

    Raises:
        ShapeError: On spatial dims not divisible by 2**depth or a channel mismatch.
    """
    x = as_diff(x, name="disc_input")
    check_spatial(x.shape, config.depth, "discriminator")
    expected = params[f"{PREFIX}enc0.weight"].shape[1]
    if x.shape[1] != expected:
        raise ShapeError(f"discriminator expects {expected} channels, got {x.shape[1]}")
    weights, advanced = normalized_weights(params, state, config)

    def conv(name: str, h: DiffArray, stride: int = 1) -> DiffArray:
        key = f"{PREFIX}{name}"
        return ops.conv2d(h, weights[f"{key}.weight"], params[f"{key}.bias"], stride, name=key)

    h = ops.leaky_relu(conv("enc0", x))
    skips = [h]
    for d in range(1, config.depth + 1):
        h = ops.leaky_relu(conv(f"enc{d}", h, stride=2))
        skips.append(h)

    phi_global = ops.mean(h, axis=(2, 3))
    global_score = project_condition(phi_global, b, ProjectionHead.from_params(params, "global"))

    for d in range(config.depth, 0, -1):
        h = ops.concat([ops.upsample_nearest(h), skips[d - 1]], axis=1)
        h = ops.leaky_relu(conv(f"dec{d}", h))
    pixel_scores = project_pixels(h, b, ProjectionHead.from_params(params, "pixel"))

    return DiscriminatorOutput(global_score, pixel_scores, phi_global), advanced
