"""Cohort-based demographic SCR for equity-linked endowments.

Idiosyncratic and trend Claims Development Results are simulated per
cohort, and the capital requirement is read off as the 99.5% one-year VaR.
"""

from .errors import InputError, SimulationFailure

__version__ = "0.1.0"

__all__ = ["InputError", "SimulationFailure", "__version__"]
