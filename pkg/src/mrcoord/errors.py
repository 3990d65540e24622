"""Exception hierarchy shared by all modules."""


class MrcoordError(Exception):
    """Base class for package errors."""


class DegenerateInputError(MrcoordError, ValueError):
    """Geometric input cannot produce the requested structure."""


class ConfigurationError(MrcoordError, ValueError):
    """A parameter or configuration value is out of its valid range."""


class RoutingError(MrcoordError, ValueError):
    """An event was applied to the model of the wrong teammate."""


class ContractError(MrcoordError, ValueError):
    """A caller violated an operation's precondition."""


class DecodeError(MrcoordError, ValueError):
    """A wire packet failed validation."""
