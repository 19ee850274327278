"""
Exception hierarchy for the walk laboratory
Every error raised on purpose by the package derives from VrrwError
"""


class VrrwError(Exception):
    """Base class for all package errors"""


class GraphError(VrrwError, ValueError):
    """Invalid graph construction input"""


class InvalidOrderError(GraphError):
    """Core order too small or parts list malformed"""


class InvalidWeightError(GraphError):
    """Non-positive or non-finite vertex weight"""


class InvalidAnchorError(GraphError):
    """Leaf anchored outside the core"""


class EmptyPartError(GraphError):
    """A part of a complete multipartite graph has no vertex"""


class FamilyMismatchError(GraphError):
    """Operation requested on a graph outside its supported family"""


class SamplingDomainError(VrrwError, ValueError):
    """Sampler argument outside its domain"""


class StructuralError(VrrwError):
    """Singular system, unreachable target or disconnected graph"""


class OverflowGuardError(VrrwError):
    """Linear-domain matrices requested beyond the overflow guard"""


class NumericalError(VrrwError):
    """A computed quantity failed its own consistency check"""


class TruncationError(VrrwError):
    """
    Event cap reached before the horizon.

    The partial trajectory is attached so callers can still report on it.
    """

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ConfigError(VrrwError, ValueError):
    """Experiment configuration could not be parsed or validated"""


class InsufficientSamplesError(VrrwError, ValueError):
    """Too few samples for the requested estimator or test"""


class PathSpaceTooLargeError(VrrwError, ValueError):
    """Exact path enumeration would exceed its budget"""


class UnknownFunctionalError(VrrwError, ValueError):
    """Functional name not in the catalogue"""
