"""Exception types shared across rfdkit.

The CLI maps these onto its exit codes; library code raises them directly.
"""


class RfdkitError(Exception):
    """Base class for rfdkit errors."""


class ConfigError(RfdkitError):
    """Invalid configuration or command-line input (CLI exit code 2)."""


class NumericsError(RfdkitError):
    """NaN/Inf reached a place that must stay finite (CLI exit code 3)."""


class ShapeMismatchError(RfdkitError):
    """Array shape or checkpoint dimension contract violated (CLI exit code 4)."""


class DataMismatchError(RfdkitError):
    """Prediction/ground-truth scene sets disagree (CLI exit code 5)."""


class FormatError(RfdkitError):
    """A file does not parse as the format it claims to be."""


class DataError(RfdkitError):
    """Degenerate data: empty ground truth, collapsed scan, unplaceable scene."""


class GraphError(RfdkitError):
    """Autodiff graph misuse (backward on non-scalar, double-visit, ...)."""
