"""Exception hierarchy shared by the pricing library and the CLI."""

from typing import Optional


class PricingError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PricingError, ValueError):
    """An input lies outside the domain of the operation (non-finite z, t = 0, ...)."""


class DimensionError(PricingError, ValueError):
    """Vector or matrix shapes do not agree."""


class ConfigurationError(PricingError, ValueError):
    """Invalid model combination or experiment configuration.

    `field` names the offending configuration key when there is one.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
