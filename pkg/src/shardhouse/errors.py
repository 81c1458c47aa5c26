"""Exception hierarchy shared by the whole package."""


class ShardhouseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ShardhouseError):
    """Invalid sharing parameters, schema, or catalog contents."""


class DomainError(ShardhouseError):
    """A value does not fit the declared domain of its column codec."""


class CorruptionError(ShardhouseError):
    """Reconstruction from a specific group of providers failed verification.

    Carries enough context to retry with a different group.
    """

    def __init__(self, message, group=(), table=None, key=None, column=None, block=None):
        super().__init__(message)
        self.group = tuple(group)
        self.table = table
        self.key = key
        self.column = column
        self.block = block


class IntegrityError(ShardhouseError):
    """Every usable provider group failed verification for some block."""


class UnavailabilityError(ShardhouseError):
    """Fewer healthy providers than the reconstruction threshold."""


class StoreError(ShardhouseError):
    """A provider-side request was malformed or violated the table schema."""


class ProtocolError(ShardhouseError):
    """Wire-level framing or sequencing violation."""


class TransportError(ShardhouseError):
    """A provider could not be reached or dropped the connection."""


class PlanError(ShardhouseError):
    """The query uses a construct the planner does not support."""
