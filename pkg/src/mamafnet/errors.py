"""Shared exception types.

ShapeError (tensor ops) and NumericalError (autodiff/training) live next
to the code that raises them; the two here cut across modules.
"""


class ConfigError(ValueError):
    """A model or run configuration violates its invariants."""


class DataError(ValueError):
    """Dataset files, manifests, or splits are invalid."""
