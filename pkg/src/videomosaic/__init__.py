"""Globally consistent planar mosaicking of video sequences.

Pairwise frames are registered densely by aligning image-gradient
orientations with Gauss-Newton; long-range overlapping pairs are retrieved
with a bag-of-visual-words similarity matrix; all frame placements are then
optimized jointly pose-graph style and composited into a mosaic.
"""

from .errors import (
    DenominatorNearZero,
    DisconnectedGraph,
    EmptyMosaic,
    InsufficientOverlap,
    LengthMismatch,
    MosaicError,
    NormalEquationsSingular,
    SingularWarp,
    SolverDiverged,
    TooFewDescriptors,
    TooSmallForPyramid,
    TrajectoryLeavesCanvas,
    ZeroVariance,
)
from .geometry import RefGrid, WarpKind, WarpParams, apply_warp, compose, invert, warp_distance
from .imageproc import Frame, GradientField, Pyramid, build_pyramid, to_grayscale

__version__ = "0.1.0"
