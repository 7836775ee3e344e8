"""Exception types shared across the package."""


class FedcastError(Exception):
    """Base class for all package errors."""


class ShapeError(FedcastError):
    """Operand shapes violate an operation's contract."""


class ContractError(FedcastError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NonFiniteError(FedcastError):
    """A NaN or Inf appeared in a tensor value."""


class ConfigError(FedcastError):
    """Invalid or inconsistent experiment configuration."""


class DataFormatError(FedcastError):
    """Malformed input data (CSV parse/schema problems, empty splits)."""


class ProtocolError(FedcastError):
    """Federation protocol violation (structure mismatch, no usable client)."""


class TransferError(FedcastError):
    """Cross-domain parameter reuse with incompatible shapes."""


class CheckpointError(FedcastError):
    """Unreadable or version-incompatible checkpoint."""
