class Error(Exception):
    """Base class for exceptions in this package."""


class InputError(Error):
    """Exception raised for errors in the input."""


class ContractError(InputError):
    """Exception raised when a shape or call-order contract is violated."""


class DomainError(Error):
    """Exception raised for values outside their mathematical domain."""


class ConfigurationError(Error):
    """Exception raised for invalid configuration values or files."""


class DataCorruptionError(Error):
    """Exception raised when a binary file fails its integrity checks."""


class DegradedError(Error):
    """Exception raised when a control loop aborts in degraded mode."""


class SimulationError(Error):
    """Exception raised for misuse of the simulator lifecycle."""


class TimerError(Error):
    """Exception raised for errors of the Timer class"""
