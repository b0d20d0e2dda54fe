"""FiLM-conditioned translation network G: (B0, T2, T1, b) -> DWI slice.

Layout (widths w_d = base_width * 2**d):
    stem      3x3 conv -> norm -> leaky ReLU                 (w_0)
    enc1..D   stride-2 3x3 conv -> norm -> leaky ReLU         (w_d)
    res0..R   residual blocks: conv -> norm -> act -> conv -> norm, plus skip
    decD..1   nearest x2 upsample, concat encoder skip, conv -> norm -> act
    head      1x1 conv with bias, then the output activation

"norm" is FiLM modulation at conditioned sites and plain instance norm
elsewhere. Conditions are embedded by a shared MLP trunk (4 -> H -> H,
leaky ReLU) followed by zero-initialized per-site heads, so every site starts
as the identity modulation (gamma = 1, beta = 0).

All parameters live in one ParamSet under the ``gen.`` prefix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from qspace_dwi.diffcore import ops
from qspace_dwi.diffcore.array import DiffArray, ParamSet, as_diff
from qspace_dwi.exceptions import ShapeError
from qspace_dwi.models import CONDITION_DIM, GeneratorConfig
from qspace_dwi.networks.common import ConditionInput, check_spatial, condition_matrix, he_normal
from qspace_dwi.settings import settings

logger = logging.getLogger(__name__)

PREFIX = "gen."
HEAD_BIAS_INIT = 0.5


@dataclass
class FiLMParams:
    """Per-channel scale and shift for one conditioned site, each [N, C]."""

    gamma: DiffArray
    beta: DiffArray


def _width(config: GeneratorConfig, level: int) -> int:
    return config.base_width * 2**level


def film_sites(config: GeneratorConfig) -> list[tuple[str, int]]:
    """(site name, channel count) of every FiLM-conditioned normalization site."""
    sites: list[tuple[str, int]] = []
    stages = set(config.conditioned_layer_set)
    if "encoder" in stages:
        sites.append(("stem", _width(config, 0)))
        sites.extend((f"enc{d}", _width(config, d)) for d in range(1, config.depth + 1))
    if "bottleneck" in stages:
        width = _width(config, config.depth)
        for i in range(config.num_res_blocks):
            sites.extend([(f"res{i}.norm1", width), (f"res{i}.norm2", width)])
    if "decoder" in stages:
        sites.extend((f"dec{d}", _width(config, d - 1)) for d in range(config.depth, 0, -1))
    return sites


def init_generator(config: GeneratorConfig, rng: np.random.Generator) -> ParamSet:
    """Fresh generator parameters; draws happen in a fixed layer order."""
    arrays: dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int, k: int = 3) -> None:
        arrays[f"{PREFIX}{name}.weight"] = he_normal(rng, (c_out, c_in, k, k), c_in * k * k)

    conv("stem", _width(config, 0), config.input_channels)
    for d in range(1, config.depth + 1):
        conv(f"enc{d}", _width(config, d), _width(config, d - 1))
    bottleneck = _width(config, config.depth)
    for i in range(config.num_res_blocks):
        conv(f"res{i}.conv1", bottleneck, bottleneck)
        conv(f"res{i}.conv2", bottleneck, bottleneck)
    for d in range(config.depth, 0, -1):
        conv(f"dec{d}", _width(config, d - 1), _width(config, d) + _width(config, d - 1))
    arrays[f"{PREFIX}head.weight"] = (
        rng.standard_normal((1, _width(config, 0), 1, 1)) * 0.02
    ).astype(np.float32)
    arrays[f"{PREFIX}head.bias"] = np.full(1, HEAD_BIAS_INIT, dtype=np.float32)

    hidden = config.mlp_hidden_width
    arrays[f"{PREFIX}mlp.fc1.weight"] = he_normal(rng, (hidden, CONDITION_DIM), CONDITION_DIM)
    arrays[f"{PREFIX}mlp.fc1.bias"] = np.zeros(hidden, dtype=np.float32)
    arrays[f"{PREFIX}mlp.fc2.weight"] = he_normal(rng, (hidden, hidden), hidden)
    arrays[f"{PREFIX}mlp.fc2.bias"] = np.zeros(hidden, dtype=np.float32)
    for site, channels in film_sites(config):
        for part in ("gamma", "beta"):
            arrays[f"{PREFIX}film.{site}.{part}.weight"] = np.zeros((channels, hidden), np.float32)
            arrays[f"{PREFIX}film.{site}.{part}.bias"] = np.zeros(channels, np.float32)

    params = ParamSet.from_arrays(arrays)
    logger.debug(f"Initialized generator with {params.num_parameters()} parameters")
    return params


def condition_embed(
    b: ConditionInput, params: ParamSet, config: GeneratorConfig, batch_size: int = 1
) -> dict[str, FiLMParams]:
    """Map conditions to FiLM parameters for every conditioned site.

    Args:
        b: One condition (broadcast over the batch) or one per sample.
        params: Generator parameters.
        config: Generator architecture.
        batch_size: Number of samples the FiLM parameters are for.

    Returns:
        Map from site name to FiLMParams with gamma = 1 + delta_gamma.
    """
    h = DiffArray.constant(condition_matrix(b, batch_size), name="condition")
    for layer in ("fc1", "fc2"):
        weight, bias = params[f"{PREFIX}mlp.{layer}.weight"], params[f"{PREFIX}mlp.{layer}.bias"]
        h = ops.leaky_relu(ops.linear(h, weight, bias))

    film: dict[str, FiLMParams] = {}
    for site, _ in film_sites(config):
        key = f"{PREFIX}film.{site}"
        delta_gamma = ops.linear(h, params[f"{key}.gamma.weight"], params[f"{key}.gamma.bias"])
        beta = ops.linear(h, params[f"{key}.beta.weight"], params[f"{key}.beta.bias"])
        film[site] = FiLMParams(gamma=delta_gamma + 1.0, beta=beta)
    return film


def film_modulate(h: DiffArray, film: FiLMParams, epsilon: float | None = None) -> DiffArray:
    """Instance-normalize h [N, C, H, W], then scale by gamma and shift by beta per channel.

    Raises:
        ShapeError: If gamma or beta length differs from the channel count.
    """
    eps = settings.instance_norm_eps if epsilon is None else epsilon
    return ops.modulate(ops.instance_norm(h, eps), film.gamma, film.beta)


def _apply_activation(out: DiffArray, config: GeneratorConfig) -> DiffArray:
    if config.output_activation == "clamp":
        return ops.clip(out, 0.0, config.intensity_cap)
    if config.output_activation == "tanh":
        return (ops.tanh(out) + 1.0) * (0.5 * config.intensity_cap)
    return out


def generator_forward(
    s: DiffArray | np.ndarray,
    b: ConditionInput,
    params: ParamSet,
    config: GeneratorConfig,
    epsilon: float | None = None,
) -> DiffArray:
    """Predict B0-ratio DWI slices.

    Args:
        s: Structural slices [N, input_channels, H, W].
        b: One condition for the whole batch or one per sample.
        params: Generator parameters.
        config: Generator architecture.
        epsilon: Instance-norm stabilizer (settings default when None).

    Returns:
        Predicted slices [N, 1, H, W].

    Raises:
        ShapeError: If the channel count or spatial dims violate the config.
    """
    x = as_diff(s, name="structural")
    check_spatial(x.shape, config.depth, "generator")
    if x.shape[1] != config.input_channels:
        raise ShapeError(
            f"generator expects {config.input_channels} input channels, got {x.shape[1]}"
        )
    eps = settings.instance_norm_eps if epsilon is None else epsilon
    film = condition_embed(b, params, config, batch_size=x.shape[0])

    def norm(site: str, h: DiffArray) -> DiffArray:
        if site in film:
            return film_modulate(h, film[site], eps)
        return ops.instance_norm(h, eps)

    def conv(name: str, h: DiffArray, stride: int = 1) -> DiffArray:
        weight = params[f"{PREFIX}{name}.weight"]
        return ops.conv2d(h, weight, stride=stride, name=f"{PREFIX}{name}")

    h = ops.leaky_relu(norm("stem", conv("stem", x)))
    skips = [h]
    for d in range(1, config.depth + 1):
        h = ops.leaky_relu(norm(f"enc{d}", conv(f"enc{d}", h, stride=2)))
        skips.append(h)
    for i in range(config.num_res_blocks):
        r = ops.leaky_relu(norm(f"res{i}.norm1", conv(f"res{i}.conv1", h)))
        r = norm(f"res{i}.norm2", conv(f"res{i}.conv2", r))
        h = h + r
    for d in range(config.depth, 0, -1):
        h = ops.concat([ops.upsample_nearest(h), skips[d - 1]], axis=1)
        h = ops.leaky_relu(norm(f"dec{d}", conv(f"dec{d}", h)))
    out = ops.conv2d(
        h, params[f"{PREFIX}head.weight"], params[f"{PREFIX}head.bias"], name=f"{PREFIX}head"
    )
    return _apply_activation(out, config)
