"""Numerical laboratory for the work statistics of a quenched two-level system.

Unit ledger used throughout: energies are stored as E/h in kHz, times in ms,
so an accumulated phase is 2*pi*E*t and an inverse temperature beta is in
(kHz)^-1, i.e. (k_B*T/h)^-1.
"""

__version__ = "0.1.0"

from .errors import ConfigError, FitError, PairingError, QworkError

__all__ = ["ConfigError", "FitError", "PairingError", "QworkError", "__version__"]
