"""Generator and discriminator networks built on diffcore."""

from qspace_dwi.networks.discriminator import (
    DiscriminatorOutput,
    ProjectionHead,
    SpectralState,
    discriminator_forward,
    init_discriminator,
    project_condition,
    project_pixels,
)
from qspace_dwi.networks.generator import (
    FiLMParams,
    condition_embed,
    film_modulate,
    film_sites,
    generator_forward,
    init_generator,
)

__all__ = [
    "DiscriminatorOutput",
    "FiLMParams",
    "ProjectionHead",
    "SpectralState",
    "condition_embed",
    "discriminator_forward",
    "film_modulate",
    "film_sites",
    "generator_forward",
    "init_discriminator",
    "init_generator",
    "project_condition",
    "project_pixels",
]
