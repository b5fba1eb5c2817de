"""Parameterized Trotter planning and GOAT pulse synthesis on a simulated
two-transmon device."""

from .device import ControlAnsatz, DeviceSpec, Saturation
from .fockspace import FockOperator, HilbertLayout, SubspaceProjector
from .goat import GoatProblem, infidelity, infidelity_and_gradient
from .model import EbhParams, ModelUnitary
from .optimize import GuessRanges, OptimizationRecord, minimize, multistart
from .propagation import IntegratorConfig, PropagationError
from .trotter import ParamGrid, Perturbation, TrotterPlan

__version__ = "0.1.0"

__all__ = [
    "ControlAnsatz", "DeviceSpec", "EbhParams", "FockOperator", "GoatProblem", "GuessRanges", "HilbertLayout",
    "IntegratorConfig", "ModelUnitary", "OptimizationRecord", "ParamGrid", "Perturbation", "PropagationError",
    "Saturation", "SubspaceProjector", "TrotterPlan", "infidelity", "infidelity_and_gradient", "minimize",
    "multistart",
]
