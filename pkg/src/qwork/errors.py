"""Exception types shared across the package."""


class QworkError(ValueError):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class ConfigError(QworkError):
    """Invalid experiment configuration; the message names the offending field."""


class FitError(QworkError):
    """Spectral fit failed; carries best-so-far diagnostics in the message."""


class PairingError(QworkError):
    """Work atoms of two distributions could not be matched by |W|."""
