"""Dense float64 arrays with reverse-mode autodiff, Adam and gradient checks."""
from . import ops
from .gradcheck import analytic_grad, grad_check
from .optim import Adam, NonFiniteError
from .params import ParamStore, glorot_uniform
from .tape import ShapeError, Tape, TapeError, Tensor, as_tensor

__all__ = [
    "Adam",
    "NonFiniteError",
    "ParamStore",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "analytic_grad",
    "as_tensor",
    "glorot_uniform",
    "grad_check",
    "ops",
]
