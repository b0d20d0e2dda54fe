"""Pydantic models for qspace_dwi - all configuration and report validation.

This module contains the validated models shared across the package:
- Network configs (generator, discriminator)
- Training configs (loss weights, optimizer, augmentation, schedule)
- Phantom geometry spec
- Loss records and metric reports

Config files are parsed with model_validate_json(); unknown keys are rejected
(extra="forbid") so a typo in a JSON config fails loudly instead of being
silently ignored.
"""

from __future__ import annotations

import math
from typing import Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

from qspace_dwi.settings import settings

ConditionedStage = Literal["encoder", "bottleneck", "decoder"]
OutputActivation = Literal["clamp", "tanh", "linear"]

CONDITION_DIM = 4


def _default_cap() -> float:
    return settings.intensity_cap


class LossWeights(BaseModel):
    """Weights of the adversarial and L1 translation terms."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_gan: float = Field(default=1.0, ge=0.0)
    lambda_l1: float = Field(default=100.0, ge=0.0)


class GeneratorConfig(BaseModel):
    """Architecture knobs of the FiLM-conditioned generator.

    input_channels selects the structural inputs: 1 = B0, 2 = B0+T2,
    3 = B0+T2+T1.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    input_channels: int = Field(default=3, ge=1, le=3)
    base_width: int = Field(default=32, ge=1)
    depth: int = Field(default=2, ge=2)
    num_res_blocks: int = Field(default=4, ge=0)
    mlp_hidden_width: int = Field(default=64, ge=1)
    conditioned_layer_set: tuple[ConditionedStage, ...] = ("bottleneck", "decoder")
    output_activation: OutputActivation = "clamp"
    intensity_cap: float = Field(default_factory=_default_cap, gt=0.0)

    @field_validator("conditioned_layer_set")
    @classmethod
    def validate_stages(cls, v: tuple[ConditionedStage, ...]) -> tuple[ConditionedStage, ...]:
        """Validate stages are unique."""
        if len(set(v)) != len(v):
            raise ValueError("conditioned_layer_set entries must be unique")
        return v


class DiscriminatorConfig(BaseModel):
    """Architecture knobs of the conditional U-Net discriminator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_width: int = Field(default=32, ge=1)
    depth: int = Field(default=2, ge=1)
    power_iters: int = Field(default=1, ge=1)


class TrainConfig(BaseModel):
    """All training hyperparameters.

    Defaults are the desk-scale preset; `reference_preset()` returns the
    published values (batch 12).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr_g: float = Field(default=1e-4, ge=0.0)
    lr_d: float = Field(default=5e-5, ge=0.0)
    beta1: float = Field(default=0.5, gt=0.0, lt=1.0)
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    batch_size: int = Field(default=8, ge=1)
    d_update_period: int = Field(default=2, ge=1)
    p_zero_b: float = Field(default=0.1, ge=0.0, le=1.0)
    p_antipodal: float = Field(default=0.1, ge=0.0, le=1.0)
    weights: LossWeights = Field(default_factory=LossWeights)
    seed: int = Field(default=0, ge=0)
    steps: int = Field(default=3000, ge=0)

    crop_size: int = Field(default=48, ge=4)
    max_bvalue: float | None = Field(default=None, gt=0.0)
    log_every: int = Field(default=50, ge=1)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)

    @model_validator(mode="after")
    def validate_crop(self) -> TrainConfig:
        """Validate the crop survives every stride-2 stage of both networks."""
        levels = max(self.generator.depth, self.discriminator.depth)
        if self.crop_size % (2**levels) != 0:
            raise ValueError(f"crop_size must be divisible by 2**{levels}")
        return self

    @classmethod
    def reference_preset(cls) -> TrainConfig:
        """Published hyperparameters (batch 12, same rates and weights)."""
        return cls(batch_size=12)


def ablation_preset(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """Input/loss ablations A-D: B0 L1-only, B0, B0+T2, B0+T2+T1 (the last three with GAN).

    Raises:
        ValueError: For an unknown model letter.
    """
    presets = {"A": (1, 0.0), "B": (1, 1.0), "C": (2, 1.0), "D": (3, 1.0)}
    key = name.upper()
    if key not in presets:
        raise ValueError(f"unknown ablation '{name}', expected one of {sorted(presets)}")
    channels, lambda_gan = presets[key]
    base = base if base is not None else TrainConfig()
    return base.model_copy(
        update={
            "generator": base.generator.model_copy(update={"input_channels": channels}),
            "weights": base.weights.model_copy(update={"lambda_gan": lambda_gan}),
        }
    )


class PhantomSpec(BaseModel):
    """Geometry, tissue and noise parameters of the tensor phantom.

    Fractions are relative to the in-plane field of view. Per-subject jitter
    perturbs radii, bundle angles and intensities so subjects differ.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    dims: tuple[int, int, int] = (48, 48, 16)
    voxel_size: tuple[float, float, float] = (1.25, 1.25, 1.25)
    n_subjects: int = Field(default=6, ge=1)
    n_val: int = Field(default=1, ge=0)
    n_test: int = Field(default=1, ge=0)

    head_radius: float = Field(default=0.42, ge=0.0, le=0.5)
    core_radius: float = Field(default=0.12, ge=0.0, le=0.5)
    bundle_half_width: float = Field(default=0.07, ge=0.0, le=0.5)
    bundle_angles_deg: tuple[float, ...] = (30.0, 120.0)
    bundle_eigenvalues: tuple[float, float, float] = (1.7e-3, 0.3e-3, 0.3e-3)
    tissue_diffusivity: float = Field(default=0.8e-3, ge=0.0)
    core_diffusivity: float = Field(default=2.0e-3, ge=0.0)
    s0_tissue: float = Field(default=1.0, ge=0.0)
    s0_bundle: float = Field(default=0.8, ge=0.0)
    s0_core: float = Field(default=1.4, ge=0.0)
    noise_fraction: float = Field(default=0.02, ge=0.0)
    jitter: float = Field(default=0.1, ge=0.0, le=0.5)

    @field_validator("dims")
    @classmethod
    def validate_dims(cls, v: tuple[int, int, int]) -> tuple[int, int, int]:
        """Validate every axis has at least 16 voxels."""
        if min(v) < 16:
            raise ValueError("phantom dims must be at least 16 along every axis")
        return v

    @model_validator(mode="after")
    def validate_splits(self) -> PhantomSpec:
        """Validate at least one training subject remains."""
        if self.n_val + self.n_test >= self.n_subjects:
            raise ValueError("n_val + n_test must leave at least one training subject")
        return self


class LossRecord(BaseModel):
    """Loss components logged for one training step."""

    step: int
    g_adv: float
    g_l1: float
    g_total: float
    d_loss: float | None = None

    def csv_row(self) -> str:
        d_loss = "" if self.d_loss is None else repr(self.d_loss)
        return f"{self.step},{self.g_adv!r},{self.g_l1!r},{self.g_total!r},{d_loss}"


LOSS_CSV_HEADER = "step,g_adv,g_l1,g_total,d_loss"


class MetricReport(BaseModel):
    """Image-quality metrics of a prediction against a reference.

    psnr is +inf for identical images and is serialized as the string "inf".
    """

    psnr: float
    ssim: float = Field(ge=-1.0, le=1.0)
    mae: float = Field(ge=0.0)
    mask: str
    notes: list[str] = Field(default_factory=list)

    @field_validator("psnr", mode="before")
    @classmethod
    def parse_psnr(cls, v: float | str) -> float:
        """Accept the "inf" sentinel when reading reports back."""
        if isinstance(v, str) and v.lower() == "inf":
            return math.inf
        return float(v)

    @field_serializer("psnr")
    def serialize_psnr(self, v: float) -> float | str:
        return "inf" if math.isinf(v) else v
