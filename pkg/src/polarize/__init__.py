"""Polarization and homogenized tensors of two-phase conductors.

Closed-form laminates, bound certification, periodic cell solves and the
boundary-current perturbation study.
"""

__version__ = "0.1.0"

from .bounds import BoundsReport, check_pointwise, check_trace_theta, check_trace_zero, sample_region_curves  # noqa: E402
from .cell_solver import HomogenizationResult, homogenize, polarization_from_effective  # noqa: E402
from .laminate import (  # noqa: E402
    LaminateSpec,
    design_laminate_for_eigenvalues,
    laminate_effective_tensor,
    laminate_polarization,
    run_dilution_study,
)
from .microstructure import Microstructure  # noqa: E402
from .tensor_core import PhasePair, SymTensor  # noqa: E402

__all__ = [
    "BoundsReport",
    "HomogenizationResult",
    "LaminateSpec",
    "Microstructure",
    "PhasePair",
    "SymTensor",
    "check_pointwise",
    "check_trace_theta",
    "check_trace_zero",
    "design_laminate_for_eigenvalues",
    "homogenize",
    "laminate_effective_tensor",
    "laminate_polarization",
    "polarization_from_effective",
    "run_dilution_study",
    "sample_region_curves",
]
