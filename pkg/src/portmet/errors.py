"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Arguments violate a precondition (bad shapes, empty data, bad fractions)."""


class DomainError(ValueError):
    """State outside the physical domain (degenerate spring length, theta <= 0)."""


class NumericError(ArithmeticError):
    """Non-finite values produced during evaluation or integration."""


class InvalidStateError(RuntimeError):
    """Object used outside its lifecycle (consumed tape, mixed tapes)."""


class ChecksumError(RuntimeError):
    """Stored file contents do not match their recorded checksum."""


class ConfigError(ValueError):
    """Configuration file rejected by strict schema validation."""
