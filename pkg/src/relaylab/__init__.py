"""Training protocols for channel estimation in amplify-and-forward relay networks.

Closed-form effective SNRs and capacity bounds, signal-level Monte Carlo
simulators that check them, and runs that reproduce reference results.
"""

__version__ = "0.1.0"

from .errors import DegenerateEstimation, NumericalError  # noqa: E402

__all__ = ["DegenerateEstimation", "NumericalError", "__version__"]
