"""QCKPT001 checkpoints: parameters, optimizer moments and spectral-norm state.

Layout:
    bytes 0-7    magic b"QCKPT001"
    bytes 8-11   manifest length M (unsigned 32-bit little-endian)
    bytes 12..   UTF-8 JSON manifest
    remainder    32-bit little-endian float blobs, in manifest order

The manifest records the training config, the max_bvalue used to normalize
conditions, the step index, each parameter set's optimizer step count, the
Adam hyperparameters (learning_rate, beta1, beta2, epsilon) per network and a
``tensors`` list of {name, shape, byte_offset} (offsets relative to the
start of the blob section). Tensor names:

    gen.* / disc.*          network parameters
    adam.gen.m.<param>      generator first moments (v for second moments)
    adam.disc.m.<param>     discriminator moments
    sn.<conv weight name>   spectral-norm power-iteration vectors
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from qspace_dwi.diffcore.array import FloatArray, ParamSet
from qspace_dwi.diffcore.optim import AdamState
from qspace_dwi.exceptions import CheckpointError
from qspace_dwi.models import GeneratorConfig, TrainConfig
from qspace_dwi.networks.discriminator import SpectralState, init_discriminator
from qspace_dwi.networks.generator import init_generator

logger = logging.getLogger(__name__)

QCKPT_MAGIC = b"QCKPT001"
_LENGTH = struct.Struct("<I")
_PREFIX = len(QCKPT_MAGIC) + _LENGTH.size
_ADAM_KEYS = ("learning_rate", "beta1", "beta2", "epsilon")


@dataclass
class CheckpointData:
    """Everything needed to resume training or run inference."""

    config: TrainConfig
    max_bvalue: float
    step: int
    g_params: ParamSet
    d_params: ParamSet
    g_opt: AdamState
    d_opt: AdamState
    sn_state: SpectralState


def _collect_tensors(data: CheckpointData) -> dict[str, FloatArray]:
    tensors: dict[str, FloatArray] = {}
    tensors.update(data.g_params.arrays())
    tensors.update(data.d_params.arrays())
    for tag, opt in (("gen", data.g_opt), ("disc", data.d_opt)):
        tensors.update({f"adam.{tag}.m.{n}": v for n, v in opt.first_moment.items()})
        tensors.update({f"adam.{tag}.v.{n}": v for n, v in opt.second_moment.items()})
    tensors.update({f"sn.{n}": v for n, v in data.sn_state.items()})
    return tensors


def _adam_hyperparameters(opt: AdamState) -> dict[str, float]:
    return {key: float(getattr(opt, key)) for key in _ADAM_KEYS}


def save_checkpoint(data: CheckpointData, path: Path) -> None:
    """Write a checkpoint.

    Raises:
        CheckpointError: If any parameter is non-finite.
    """
    tensors = _collect_tensors(data)
    entries: list[dict[str, Any]] = []
    blobs: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        raster = np.ascontiguousarray(tensors[name], dtype="<f4")
        if not np.all(np.isfinite(raster)):
            raise CheckpointError(f"refusing to save non-finite tensor '{name}'")
        blob = raster.tobytes()
        entries.append({"name": name, "shape": list(raster.shape), "byte_offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "config": data.config.model_dump(mode="json"),
        "max_bvalue": data.max_bvalue,
        "step": data.step,
        "g_step_count": data.g_params.step_count,
        "d_step_count": data.d_params.step_count,
        "adam": {
            "gen": _adam_hyperparameters(data.g_opt),
            "disc": _adam_hyperparameters(data.d_opt),
        },
        "tensors": entries,
    }
    header = json.dumps(manifest).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(QCKPT_MAGIC + _LENGTH.pack(len(header)) + header + b"".join(blobs))
    logger.info(f"Saved checkpoint at step {data.step} to {path}")


def _read_manifest(blob: bytes) -> tuple[dict[str, Any], bytes]:
    if blob[: len(QCKPT_MAGIC)] != QCKPT_MAGIC:
        raise CheckpointError("bad magic: not a QCKPT001 checkpoint")
    if len(blob) < _PREFIX:
        raise CheckpointError("manifest/blob mismatch: missing manifest length")
    (length,) = _LENGTH.unpack_from(blob, len(QCKPT_MAGIC))
    if _PREFIX + length > len(blob):
        raise CheckpointError("manifest/blob mismatch: manifest overruns the file")
    try:
        manifest = json.loads(blob[_PREFIX : _PREFIX + length].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"malformed manifest: {e}") from e
    return manifest, blob[_PREFIX + length :]


def _read_tensors(manifest: dict[str, Any], payload: bytes) -> dict[str, FloatArray]:
    tensors: dict[str, FloatArray] = {}
    expected_offset = 0
    try:
        for entry in manifest["tensors"]:
            shape = tuple(int(n) for n in entry["shape"])
            nbytes = 4 * math.prod(shape)
            offset = int(entry["byte_offset"])
            if offset != expected_offset or offset + nbytes > len(payload):
                raise CheckpointError(f"manifest/blob mismatch at tensor '{entry['name']}'")
            raster = np.frombuffer(payload, dtype="<f4", count=math.prod(shape), offset=offset)
            tensors[str(entry["name"])] = raster.astype(np.float32).reshape(shape)
            expected_offset = offset + nbytes
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed manifest: {e}") from e
    if expected_offset != len(payload):
        raise CheckpointError(
            f"manifest/blob mismatch: manifest covers {expected_offset} bytes, "
            f"blob holds {len(payload)}"
        )
    return tensors


def _check_shapes(config: TrainConfig, tensors: dict[str, FloatArray]) -> None:
    """Compare stored network tensors against a fresh init of `config`."""
    rng = np.random.default_rng(0)
    expected = init_generator(config.generator, rng).arrays()
    d_params, _ = init_discriminator(config.discriminator, config.generator.input_channels + 1, rng)
    expected.update(d_params.arrays())
    stored = {n: t for n, t in tensors.items() if n.startswith(("gen.", "disc."))}
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise CheckpointError(f"shape drift: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, raster in expected.items():
        if stored[name].shape != raster.shape:
            raise CheckpointError(
                f"shape drift: '{name}' stored {stored[name].shape}, config expects {raster.shape}"
            )


def load_checkpoint(path: Path, expected_config: TrainConfig | None = None) -> CheckpointData:
    """Read a checkpoint, optionally checking it against an expected config.

    Raises:
        OSError: If the file cannot be read.
        CheckpointError: On bad magic, manifest/blob mismatch or shape drift.
    """
    manifest, payload = _read_manifest(Path(path).read_bytes())
    tensors = _read_tensors(manifest, payload)
    try:
        config = TrainConfig.model_validate(manifest["config"])
        max_bvalue = float(manifest["max_bvalue"])
        step = int(manifest["step"])
        g_count = int(manifest["g_step_count"])
        d_count = int(manifest["d_step_count"])
        hyper = {
            tag: {key: float(manifest["adam"][tag][key]) for key in _ADAM_KEYS}
            for tag in ("gen", "disc")
        }
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed manifest: {e}") from e

    _check_shapes(config, tensors)
    if expected_config is not None:
        _check_shapes(expected_config, tensors)

    def params(prefix: str, count: int) -> ParamSet:
        return ParamSet.from_arrays(
            {n: t for n, t in tensors.items() if n.startswith(prefix)}, step_count=count
        )

    def adam(tag: str) -> AdamState:
        m_key, v_key = f"adam.{tag}.m.", f"adam.{tag}.v."
        return AdamState(
            learning_rate=hyper[tag]["learning_rate"],
            beta1=hyper[tag]["beta1"],
            beta2=hyper[tag]["beta2"],
            epsilon=hyper[tag]["epsilon"],
            first_moment={n[len(m_key) :]: t for n, t in tensors.items() if n.startswith(m_key)},
            second_moment={n[len(v_key) :]: t for n, t in tensors.items() if n.startswith(v_key)},
        )

    data = CheckpointData(
        config=config,
        max_bvalue=max_bvalue,
        step=step,
        g_params=params("gen.", g_count),
        d_params=params("disc.", d_count),
        g_opt=adam("gen"),
        d_opt=adam("disc"),
        sn_state={n[len("sn.") :]: t for n, t in tensors.items() if n.startswith("sn.")},
    )
    logger.info(f"Loaded checkpoint at step {step} from {path}")
    return data


def load_generator(path: Path) -> tuple[ParamSet, GeneratorConfig, float]:
    """Generator parameters, architecture and training max_bvalue for inference."""
    data = load_checkpoint(path)
    return data.g_params, data.config.generator, data.max_bvalue
