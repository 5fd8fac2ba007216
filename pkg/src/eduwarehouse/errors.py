"""Exception types shared across the warehouse."""


class WarehouseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(WarehouseError):
    """Invalid user input: bad keys, malformed config, out-of-range arguments."""


class StorageError(WarehouseError):
    """Segment store failure: unknown batch, unreadable segment, failed move."""


class AuthenticationError(WarehouseError):
    """Uniform login failure; never discloses whether the login exists."""


class BenchError(WarehouseError):
    """Benchmark harness failure (rejected batch, concurrent bench, bad plan)."""
