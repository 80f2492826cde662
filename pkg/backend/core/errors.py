"""
Exception and warning bases shared by the numerical modules.

Module-specific errors live at the top of each core module and derive
from one of the two bases here; the command line maps them to exit codes.
"""


class EpflowError(Exception):
    pass


class NumericalGuardError(EpflowError):
    """A numerical certificate or guard failed (exit code 2)."""
    exit_code = 2


class ConfigError(EpflowError):
    """Invalid user input or configuration (exit code 1)."""
    exit_code = 1


class InvalidParams(ConfigError):
    pass


class EpflowWarning(UserWarning):
    pass
