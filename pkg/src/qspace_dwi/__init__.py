"""Q-space conditioned structural-to-DWI synthesis.

Subpackages:
- diffcore: differentiable arrays, primitives, spectral norm, Adam
- networks: FiLM-conditioned generator, projection U-Net discriminator
- training: samples, alternating GAN loop, checkpoints
- evaluation: image metrics, DTI fitting, q-space restoration
"""

from qspace_dwi.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    LossWeights,
    MetricReport,
    PhantomSpec,
    TrainConfig,
)
from qspace_dwi.qspace import (
    BVector,
    ConditionVector,
    GradientEntry,
    GradientTable,
    parse_gradient_table,
    to_condition,
)
from qspace_dwi.volume import VolumeStack, read_volume, write_volume

__version__ = "0.0.0"

__all__ = [
    "BVector",
    "ConditionVector",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "GradientEntry",
    "GradientTable",
    "LossWeights",
    "MetricReport",
    "PhantomSpec",
    "TrainConfig",
    "VolumeStack",
    "__version__",
    "parse_gradient_table",
    "read_volume",
    "to_condition",
    "write_volume",
]
