from . import ops
from .gradcheck import GradCheckReport, ParamCheck, grad_check
from .tensor import DTYPES, Tape, Tensor, active_tape, set_debug_finite_checks

__all__ = [
    "DTYPES",
    "GradCheckReport",
    "ParamCheck",
    "Tape",
    "Tensor",
    "active_tape",
    "grad_check",
    "ops",
    "set_debug_finite_checks",
]
