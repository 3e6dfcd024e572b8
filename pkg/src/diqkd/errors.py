"""Exception types shared across the package.

Domain errors (bad argument values) raise plain ValueError; these classes
cover model-level failures that callers may want to handle distinctly.
"""


class ModelError(Exception):
    """A model is unusable as configured (e.g. unnormalizable dwell distribution)."""


class InsufficientStatistics(ModelError):
    """Not enough events to form an estimate (empty setting cell, M_test = 0)."""
