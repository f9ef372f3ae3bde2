class CCLError(ValueError):
    """Base class for invalid inputs and numerical failures in this package."""


class ConfigError(CCLError):
    """A run configuration failed validation."""


class DivergenceError(CCLError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(CCLError):
    """A checkpoint file is malformed or does not match the expected architecture."""
