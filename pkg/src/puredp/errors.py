"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter lies outside the range an operation accepts."""


class StructuralError(ValueError):
    """A message batch, attack or transcript is malformed."""


class ResourceError(RuntimeError):
    """An exact computation would exceed its size guard."""
