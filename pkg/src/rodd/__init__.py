"""rodd: out-of-distribution detection via orthonormal class embeddings.

Pipeline: contrastive pre-training of a small encoder body, supervised
fine-tuning against frozen orthonormal class directions with a sharpening
head, per-class first-singular-vector fitting, and angle-based OOD scoring
with FPR95/AUROC evaluation.  A spectral-theory harness numerically checks
the low-rank structure the method relies on.
"""

from .errors import (
    ContractViolation,
    DegenerateFeatureError,
    DivergenceError,
    FormatError,
    NumericFailure,
    RoddError,
)

__all__ = [
    "ContractViolation",
    "DegenerateFeatureError",
    "DivergenceError",
    "FormatError",
    "NumericFailure",
    "RoddError",
]

__version__ = "0.1.0"
