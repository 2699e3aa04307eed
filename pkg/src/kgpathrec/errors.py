"""Shared exception types, mapped to CLI exit codes by the command layer."""


class KgPathRecError(Exception):
    """Base class for all package-specific errors."""


class DataError(KgPathRecError):
    """Malformed or inconsistent input data (exit code 2)."""


class ConfigError(KgPathRecError):
    """Out-of-range or contradictory configuration (exit code 1)."""


class CheckpointError(KgPathRecError):
    """Unreadable or version-mismatched checkpoint (exit code 2)."""


class DivergenceError(KgPathRecError):
    """Non-finite values encountered during optimization (exit code 3)."""
