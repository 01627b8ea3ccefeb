"""qclnet: quaternion-valued correlation learning for few-shot segmentation.

Dense query/support correlation pyramids are aggregated into a 2x2 support
subspace, lifted into quaternion feature maps, refined by quaternion
convolutions with shared Hamilton-product weights, and decoded back into a
binary query mask. Everything runs on float64 numpy with a small reverse-mode
tape; hot convolution loops are numba-compiled when available.
"""

from .config import Config, load_config, parse_config
from .errors import (ConfigError, ContractError, DomainError, QclnetError,
                     ShapeError, ValidationError)
from .quaternion import Quaternion, conjugate, hamilton, norm, unit

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "ContractError",
    "DomainError",
    "QclnetError",
    "Quaternion",
    "ShapeError",
    "ValidationError",
    "__version__",
    "conjugate",
    "hamilton",
    "load_config",
    "norm",
    "parse_config",
    "unit",
]
