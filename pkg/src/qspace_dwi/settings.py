"""Runtime configuration using pydantic-settings.

Centralizes process-wide defaults with environment variable support.
All values are loaded from environment variables with the QDWI_ prefix
(or a local .env file). Experiment hyperparameters live in JSON config
files validated by the models in qspace_dwi.models, not here.

Usage:
    from qspace_dwi.settings import settings

    cap = settings.intensity_cap
    eps = settings.instance_norm_eps
"""

from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class QSpaceSettings(BaseSettings):
    """Process-wide settings.

    Environment variables:
        QDWI_LOG_LEVEL: Logging level name for the CLI (default: INFO)
        QDWI_INTENSITY_CAP: Upper bound of B0-ratio images (default: 1.5)
        QDWI_B0_FLOOR_FRACTION: B0 division floor as a fraction of the slice
            maximum (default: 1e-3)
        QDWI_INSTANCE_NORM_EPS: Variance stabilizer for instance norm (default: 1e-5)
        QDWI_METRIC_DATA_RANGE: Dynamic range R used by PSNR/SSIM (default: 1.5)
        QDWI_SSIM_SIGMA: Gaussian window sigma for SSIM (default: 1.5)
        QDWI_SSIM_WINDOW: Gaussian window width for SSIM (default: 11)
        QDWI_DEFAULT_SEED: Seed used when a command is given none (default: 0)
        QDWI_OUTPUT_DIR: Default directory for generated artifacts
    """

    model_config = SettingsConfigDict(
        env_prefix="QDWI_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: str = "INFO"

    # Intensity conventions shared by training, restoration and metrics
    intensity_cap: float = Field(default=1.5, gt=0.0)
    b0_floor_fraction: float = Field(default=1e-3, ge=0.0, lt=1.0)

    # Numerical stabilizers
    instance_norm_eps: float = Field(default=1e-5, gt=0.0)

    # Image-quality metrics
    metric_data_range: float = Field(default=1.5, gt=0.0)
    ssim_sigma: float = Field(default=1.5, gt=0.0)
    ssim_window: int = Field(default=11, ge=3)

    default_seed: int = 0
    output_dir: Path = Field(default=Path("output"))

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate the level name is one the logging module knows."""
        level = v.upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level: {v}")
        return level

    @field_validator("ssim_window")
    @classmethod
    def validate_window(cls, v: int) -> int:
        """Validate the SSIM window is odd so it has a centre pixel."""
        if v % 2 == 0:
            raise ValueError("ssim_window must be odd")
        return v


@lru_cache
def get_settings() -> QSpaceSettings:
    """Get cached settings instance.

    Returns:
        QSpaceSettings instance (cached after first call).
    """
    return QSpaceSettings()


# Convenience singleton for direct import
settings = get_settings()


if __name__ == "__main__":
    """Debug command to dump current settings.

    Usage:
        python -m qspace_dwi.settings
    """
    import json
    import sys

    try:
        print(json.dumps(settings.model_dump(mode="json"), indent=2))
    except Exception as e:
        print(f"Error loading settings: {e}", file=sys.stderr)
        sys.exit(1)
