"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SpilloverError(Exception):
    """Base class for all library errors."""


class InputError(SpilloverError):
    """Malformed or invalid user input. The CLI maps these to exit code 2."""


class InvalidEdge(InputError):
    pass


class ClusterTooSmall(InputError):
    pass


class BadParam(InputError):
    pass


class LengthMismatch(InputError):
    pass


class ParseError(InputError):
    pass


class MissingCovariate(InputError):
    pass


class MissingDecomposition(InputError):
    pass


class EmptyEstimand(InputError):
    pass


class EmptyConditional(InputError):
    pass


class ClusterTooLargeForOracle(InputError):
    pass


class EstimationError(SpilloverError):
    """Raised when a particular sample cannot be estimated."""


class ZeroRealizedProbability(EstimationError):
    pass


class SingularDesign(EstimationError):
    pass


class DegenerateArm(EstimationError):
    pass
