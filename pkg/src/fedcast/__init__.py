"""Federated multi-domain time-series forecasting at desk scale.

A shared encoder (patch projection + prototype-based prompt selection) is
trained across clients by parameter averaging while each client keeps a
private prediction head; a frozen seeded transformer sits in between. The
package ships the training protocol, few-shot and zero-shot evaluation, a
synthetic corpus generator and a CLI harness.
"""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, ContractError,
                     DataFormatError, FedcastError, NonFiniteError,
                     ProtocolError, ShapeError, TransferError)

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "DataFormatError",
    "FedcastError", "NonFiniteError", "ProtocolError", "ShapeError",
    "TransferError", "__version__",
]
