"""
reluopt - optimization over trained ReLU networks.

Encodes feed-forward ReLU networks as mixed-integer linear programs, tightens
and rescales those encodings, enumerates linear regions and minimizes network
outputs with an in-house branch-and-bound solver.
"""

__version__ = "0.1.0"


class ReluOptError(Exception):
    """Base class for all errors raised by reluopt."""


class NetworkFormatError(ReluOptError, ValueError):
    """A network file or in-memory network violates the format invariants."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class DimensionMismatchError(ReluOptError, ValueError):
    """An input vector does not match the network's input dimension."""


class UnsupportedActivationError(ReluOptError):
    """The operation is not defined for the network's activation kind."""


class TrainingDivergedError(ReluOptError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class BoundsRelationError(ReluOptError):
    """Scaled IA bounds do not follow the expected relation to the original bounds."""

    def __init__(self, message: str, worst: dict):
        self.worst = worst
        super().__init__(f"{message}; worst neuron {worst}")


class EncodingError(ReluOptError):
    """The MILP encoder received inconsistent bounds or an unsupported network."""


class DegenerateRegionError(ReluOptError):
    """A linear region has an empty interior."""


class IncompleteAtlasError(ReluOptError):
    """An operation needs a complete region atlas but the enumeration was truncated."""


class RegionLimitError(ReluOptError):
    """The network has more hidden neurons than region enumeration allows."""


class ScalingEquivalenceError(ReluOptError):
    """A scaled network failed the function-equivalence check."""

    def __init__(self, deviation: float, point):
        self.deviation = deviation
        self.point = point
        super().__init__(f"scaled network deviates by {deviation:.3e} at {list(point)}")


class GridValidationError(ReluOptError, ValueError):
    """An experiment grid uses values outside the known hyperparameter vocabulary."""
