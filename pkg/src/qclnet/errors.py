"""Exception taxonomy shared across the package."""


class QclnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(QclnetError):
    """Operands have incompatible extents."""


class ValidationError(QclnetError):
    """A value violates an operation's precondition (non-binary mask, NaN input, ...)."""


class ConfigError(QclnetError):
    """A configuration is malformed or violates a structural constraint."""


class DomainError(QclnetError):
    """A mathematically undefined operation was requested (e.g. normalizing zero)."""


class ContractError(QclnetError):
    """An API usage rule was broken (e.g. double backward on one tape)."""
