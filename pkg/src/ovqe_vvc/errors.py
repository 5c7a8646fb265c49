"""Exception hierarchy shared by all modules.

Argument-style failures subclass ``ValueError`` so plain ``except ValueError``
handlers keep working.
"""


class OVQEError(Exception):
    """Base class for every error raised by this package."""


class FormatError(OVQEError, ValueError):
    """Raw video file does not match the declared geometry."""


class PairingError(OVQEError, ValueError):
    """Two or more sequences that must match in geometry/length do not."""


class CodecError(OVQEError):
    """External encoder or decoder failed.

    ``output`` carries the captured stdout/stderr of the failing process.
    """

    def __init__(self, message, output=""):
        super().__init__(message)
        self.output = output


class IntegrityError(OVQEError):
    """Decoded output disagrees with the input (frame count, geometry)."""


class NumericError(OVQEError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class CheckpointError(OVQEError, ValueError):
    """Weight container is malformed or disagrees with the model config."""


class OverlapError(OVQEError, ValueError):
    """Two RD curves share no PSNR interval."""


class ConfigError(OVQEError, ValueError):
    """Run configuration failed validation."""
