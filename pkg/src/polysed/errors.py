"""Exception types shared across the package."""


class PolysedError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(PolysedError):
    """Invalid or inconsistent run configuration."""


class DivergenceError(PolysedError):
    """Non-finite gradients encountered during optimization."""


class LeakageError(PolysedError):
    """Augmented or out-of-partition data found in a validation/test set."""


class GenerationError(PolysedError):
    """Synthetic dataset generation could not satisfy its constraints."""
