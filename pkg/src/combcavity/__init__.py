"""Self-ordering of cold atoms in a cavity pumped by a frequency comb."""

from .model import ATOM_MASS, LAMBDA_C, ParameterError, SystemParams
from .modes import ModeLadder, OrderParameterSet, build_comb, chi, order_parameters

__version__ = "0.1.0"

__all__ = [
    "ATOM_MASS", "LAMBDA_C", "ParameterError", "SystemParams", "ModeLadder",
    "OrderParameterSet", "build_comb", "chi", "order_parameters", "__version__",
]
