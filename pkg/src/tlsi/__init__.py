"""Click prediction from behavior sequences, with attention over calendar time and a time-gated LSTM.

Everything numeric runs on a small reverse-mode differentiation engine
(:mod:`tlsi.autodiff`) over float64 numpy arrays.
"""

from .config import VARIANTS, TrainConfig
from .model import TlsiModel

__all__ = ["TrainConfig", "TlsiModel", "VARIANTS"]
__version__ = "0.1.0"
