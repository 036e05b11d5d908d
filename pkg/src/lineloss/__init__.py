"""Graph-attention forecasting of feeder line-loss rates, with SCADA cleaning and a numpy autograd core."""

from .errors import LineLossError

__version__ = "0.1.0"

__all__ = ["LineLossError", "__version__"]
