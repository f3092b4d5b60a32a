"""Exception hierarchy; the CLI maps each class to a distinct exit code."""


class SoftsurfError(Exception):
    """Base class for all package errors."""


class ConfigError(SoftsurfError):
    """Invalid or inconsistent configuration values."""


class DataFormatError(SoftsurfError):
    """Malformed, truncated, or incompatible data/checkpoint files."""


class DivergenceError(SoftsurfError):
    """Numerical blow-up: non-finite state during simulation or training."""
