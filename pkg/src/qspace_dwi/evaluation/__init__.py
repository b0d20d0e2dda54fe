"""Image metrics, DTI fitting and q-space restoration."""

from qspace_dwi.evaluation.dti import (
    TensorFit,
    design_matrix,
    dti_fit,
    fa_map,
    fractional_anisotropy,
    md_map,
)
from qspace_dwi.evaluation.metrics import compute_metrics
from qspace_dwi.evaluation.restore import (
    Synthesizer,
    animate_frames,
    interpolation_path,
    restore_qspace,
    select_entries,
    synthesize_volume,
)

__all__ = [
    "Synthesizer",
    "TensorFit",
    "animate_frames",
    "compute_metrics",
    "design_matrix",
    "dti_fit",
    "fa_map",
    "fractional_anisotropy",
    "interpolation_path",
    "md_map",
    "restore_qspace",
    "select_entries",
    "synthesize_volume",
]
