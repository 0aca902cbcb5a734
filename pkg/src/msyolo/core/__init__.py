from .fileio import TensorFormatError, load_tensor, save_tensor
from .tensor import ConvParams, Precision, Rng, ShapeError, Tensor, check_finite, rng_fill

__all__ = [
    "ConvParams",
    "Precision",
    "Rng",
    "ShapeError",
    "Tensor",
    "TensorFormatError",
    "check_finite",
    "load_tensor",
    "rng_fill",
    "save_tensor",
]
