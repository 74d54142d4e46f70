"""Multi-receptive-field non-local dehazing network on a numpy autodiff core."""

__version__ = "0.1.0"

from .tensor import Tensor

__all__ = ["Tensor", "__version__"]
