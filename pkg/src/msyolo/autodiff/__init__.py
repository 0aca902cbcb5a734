from .check import GradcheckError, GradcheckReport, gradcheck
from .optim import OptimState, adamw_step, cosine_lr
from .tape import Record, Tape, TapeError, backward

__all__ = [
    "GradcheckError",
    "GradcheckReport",
    "OptimState",
    "Record",
    "Tape",
    "TapeError",
    "adamw_step",
    "backward",
    "cosine_lr",
    "gradcheck",
]
