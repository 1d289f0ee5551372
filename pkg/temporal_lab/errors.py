"""
Error Types
Exception hierarchy shared by the core modules and the agents
"""


class LabError(Exception):
    """Base class for every error raised by the lab"""


class ConfigError(LabError):
    """Invalid, unknown or out-of-range configuration"""


class PreconditionError(LabError, ValueError):
    """An operation was called with arguments that violate its contract"""


class NumericError(LabError, ArithmeticError):
    """Non-finite values, zero-norm vectors, divergence or failed gradient checks"""


class DataIOError(LabError):
    """Reading or writing an artifact failed"""


class WavFormatError(DataIOError):
    """Malformed WAV file or unsupported channel count / bit depth"""
