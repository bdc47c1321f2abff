"""Exception hierarchy shared across the mosaicking pipeline."""


class MosaicError(Exception):
    """Base class for all pipeline-specific errors."""


class SingularWarp(MosaicError):
    """Warp matrix is not invertible (|det| below threshold)."""


class DenominatorNearZero(MosaicError):
    """Projective denominator vanished while applying or normalizing a warp."""


class TooSmallForPyramid(MosaicError):
    """Image too small to build even a single pyramid level."""


class InsufficientOverlap(MosaicError):
    """Too few jointly valid pixels to evaluate a registration objective."""

    def __init__(self, n_valid: int, required: int):
        super().__init__(f"{n_valid} valid pixels in overlap, {required} required")
        self.n_valid = n_valid
        self.required = required


class ZeroVariance(MosaicError):
    """An image patch is constant over the overlap; NCC is undefined."""


class NormalEquationsSingular(MosaicError):
    """Damped normal equations could not be solved even at maximum damping."""


class TooFewDescriptors(MosaicError):
    """Fewer descriptors than requested clusters."""


class DisconnectedGraph(MosaicError):
    """Pose graph has no usable constraints reaching the reference frame."""

    def __init__(self, reachable: list):
        super().__init__(f"only frames {sorted(reachable)} reachable from frame 0")
        self.reachable = sorted(reachable)


class SolverDiverged(MosaicError):
    """Bundle adjustment cost exceeded the divergence guard."""


class EmptyMosaic(MosaicError):
    """No accepted frame available for compositing."""


class TrajectoryLeavesCanvas(MosaicError):
    """A synthetic frame footprint falls outside the scene canvas."""


class LengthMismatch(MosaicError):
    """Global and ground-truth warp lists differ in length."""
