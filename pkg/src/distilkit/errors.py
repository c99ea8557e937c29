"""Exception taxonomy shared across the toolkit.

Every error the library raises on purpose derives from DistilkitError so the
CLI can map them to exit code 1; codec errors additionally carry a stable
`code` string distinguishing the failure mode.
"""


class DistilkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DistilkitError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(DistilkitError, ValueError):
    """Non-finite values where finite ones are required."""


class DistributionError(DistilkitError, ValueError):
    """A probability vector violates non-negativity or normalization."""


class ConfigError(DistilkitError, ValueError):
    """Invalid model/training/generator configuration."""


class ContractError(DistilkitError, RuntimeError):
    """A call violated an API contract (e.g. backward without forward cache)."""


class DataError(DistilkitError, ValueError):
    """Mismatched datasets: unknown ids, frame-count disagreements, bad labels."""


class TrainingDivergedError(DistilkitError, RuntimeError):
    """Non-finite loss during optimization; message carries epoch/batch."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class CodecError(DistilkitError):
    """Base for binary file-format errors; `code` is a stable identifier."""

    code = "codec"


class BadMagicError(CodecError):
    code = "bad_magic"


class VersionMismatchError(CodecError):
    code = "version_mismatch"


class TruncatedFileError(CodecError):
    code = "truncated"


class CrcMismatchError(CodecError):
    code = "crc_mismatch"


class TrailingDataError(CodecError):
    code = "trailing_data"
