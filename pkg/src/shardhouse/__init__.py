"""shardhouse: threshold multi-secret sharing for relational warehouses.

The package splits every sensitive value into digit blocks, shares each
block as one integer per storage provider, and keeps two signatures per
block so that any t of n providers can rebuild the data exactly while
corrupted or withheld shares are detected.  On top of the sharing core it
ships a provider store with a small wire protocol, a query router that
pushes filters and distributive aggregates down to providers, warehouse
lifecycle tooling (schema sharing, bulk load, cube build and refresh,
provider recovery), and a benchmark CLI.
"""

from .errors import (
    ConfigError,
    CorruptionError,
    DomainError,
    IntegrityError,
    PlanError,
    ProtocolError,
    ShardhouseError,
    StoreError,
    TransportError,
    UnavailabilityError,
)
from .sharing import (
    Block,
    CoefficientSet,
    ReconstructionContext,
    ShareBundle,
    SharingConfig,
    build_reconstruction,
    gen_coefficients,
    inner_signature,
    make_blocks,
    outer_signature,
    reconstruct_block,
    share_block,
    verify_outer,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "SharingConfig",
    "Block",
    "ShareBundle",
    "CoefficientSet",
    "ReconstructionContext",
    "gen_coefficients",
    "make_blocks",
    "inner_signature",
    "share_block",
    "outer_signature",
    "verify_outer",
    "build_reconstruction",
    "reconstruct_block",
    "ShardhouseError",
    "ConfigError",
    "DomainError",
    "CorruptionError",
    "IntegrityError",
    "UnavailabilityError",
    "StoreError",
    "ProtocolError",
    "TransportError",
    "PlanError",
]
