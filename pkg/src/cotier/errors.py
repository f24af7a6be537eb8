"""Exception types shared across the package."""


class CotierError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CotierError):
    """Invalid configuration value, unknown key, or unknown preset."""


class ShapeError(CotierError):
    """Input does not match the expected shape or length."""


class NumericError(CotierError):
    """Non-finite values appeared where finite numbers are required."""


class InsufficientIdentitiesError(CotierError):
    """Fewer distinct labels are available than the sampler needs."""


class NoNegativesError(CotierError):
    """A batch contains a single distinct label, so no negative pairs exist."""
