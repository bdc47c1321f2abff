"""Warp algebra: parametrization, application, composition, inversion, distance.

Warps are planar homographies stored as the 8 coefficients of the canonical
representation

    w(x, y) = ((p1 x + p2 y + p3) / (p7 x + p8 y + 1),
               (p4 x + p5 y + p6) / (p7 x + p8 y + 1))

with the affine subgroup as the constrained special case p7 = p8 = 0.
Coordinates are (x, y) = (column, row) with pixel centers at integer
positions. The 3x3 matrix [[p1,p2,p3],[p4,p5,p6],[p7,p8,1]] is only a
transient used for composition and inversion; the stored form is always the
coefficient vector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DenominatorNearZero, SingularWarp

DET_EPS = 1e-12
DENOM_EPS = 1e-9


class WarpKind(str, enum.Enum):
    AFFINE = "affine"
    HOMOGRAPHY = "homography"


@dataclass(frozen=True)
class WarpParams:
    """An invertible planar warp in 8-coefficient form.

    ``kind == AFFINE`` guarantees ``p7 == p8 == 0`` exactly; construction
    rejects non-invertible matrices so downstream operations stay total.
    """

    p: tuple[float, float, float, float, float, float, float, float]
    kind: WarpKind = WarpKind.AFFINE

    def __post_init__(self):
        if len(self.p) != 8:
            raise ValueError(f"expected 8 coefficients, got {len(self.p)}")
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if self.kind == WarpKind.AFFINE and (self.p[6] != 0.0 or self.p[7] != 0.0):
            raise ValueError("affine warp requires p7 == p8 == 0")
        det = np.linalg.det(self.matrix())
        if not math.isfinite(det) or abs(det) <= DET_EPS:
            raise SingularWarp(f"warp matrix is singular (det={det:.3e})")

    # -- constructors ------------------------------------------------------

    @classmethod
    def identity(cls) -> "WarpParams":
        return cls((1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0), WarpKind.AFFINE)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "WarpParams":
        return cls((1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0), WarpKind.AFFINE)

    @classmethod
    def affine(cls, a: float, b: float, c: float, d: float, e: float, f: float) -> "WarpParams":
        return cls((a, b, c, d, e, f, 0.0, 0.0), WarpKind.AFFINE)

    @classmethod
    def similarity(cls, angle_rad: float, scale: float, tx: float, ty: float,
                   center: tuple[float, float] = (0.0, 0.0)) -> "WarpParams":
        """Rotation by ``angle_rad`` and uniform ``scale`` about ``center``,
        followed by translation ``(tx, ty)``."""
        ca, sa = math.cos(angle_rad) * scale, math.sin(angle_rad) * scale
        cx, cy = center
        c = cx - ca * cx + sa * cy + tx
        f = cy - sa * cx - ca * cy + ty
        return cls((ca, -sa, c, sa, ca, f, 0.0, 0.0), WarpKind.AFFINE)

    @classmethod
    def from_matrix(cls, mat: np.ndarray, kind: WarpKind | None = None) -> "WarpParams":
        """Build from a 3x3 matrix, renormalizing so the (3,3) entry is 1."""
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (3, 3):
            raise ValueError("expected a 3x3 matrix")
        w = mat[2, 2]
        if abs(w) < DET_EPS:
            raise DenominatorNearZero("matrix (3,3) entry too small to normalize")
        mat = mat / w
        if kind is None:
            kind = WarpKind.AFFINE if (mat[2, 0] == 0.0 and mat[2, 1] == 0.0) else WarpKind.HOMOGRAPHY
        if kind == WarpKind.AFFINE:
            p78 = (0.0, 0.0)
        else:
            p78 = (mat[2, 0], mat[2, 1])
        return cls((mat[0, 0], mat[0, 1], mat[0, 2],
                    mat[1, 0], mat[1, 1], mat[1, 2], *p78), kind)

    # -- views -------------------------------------------------------------

    def matrix(self) -> np.ndarray:
        p = self.p
        return np.array([[p[0], p[1], p[2]],
                         [p[3], p[4], p[5]],
                         [p[6], p[7], 1.0]])

    def as_vector(self) -> np.ndarray:
        return np.array(self.p)

    def is_affine(self) -> bool:
        return self.kind == WarpKind.AFFINE

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "p": list(self.p)}

    @classmethod
    def from_json(cls, obj: dict) -> "WarpParams":
        return cls(tuple(obj["p"]), WarpKind(obj["kind"]))


@dataclass(frozen=True)
class RefGrid:
    """Regular lattice of reference points over an image domain.

    Points sit at integer pixel centers (0, step, 2*step, ...) strictly
    inside [0, width) x [0, height).
    """

    domain_width: int
    domain_height: int
    step: int = 3

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("grid step must be >= 1")
        if self.domain_width <= 0 or self.domain_height <= 0:
            raise ValueError("grid domain must be non-empty")

    def points(self) -> np.ndarray:
        """All lattice points as an (N, 2) array of (x, y)."""
        xs = np.arange(0, self.domain_width, self.step, dtype=float)
        ys = np.arange(0, self.domain_height, self.step, dtype=float)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def apply_warp(w: WarpParams, point: Sequence[float]) -> tuple[float, float]:
    """Map a single (x, y) point through the warp."""
    x, y = float(point[0]), float(point[1])
    p = w.p
    den = p[6] * x + p[7] * y + 1.0
    if abs(den) <= DENOM_EPS:
        raise DenominatorNearZero(f"denominator {den:.3e} at point ({x}, {y})")
    return ((p[0] * x + p[1] * y + p[2]) / den,
            (p[3] * x + p[4] * y + p[5]) / den)


def apply_warp_array(w: WarpParams, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`apply_warp` for an (N, 2) point array."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    p = w.p
    den = p[6] * x + p[7] * y + 1.0
    if np.any(np.abs(den) <= DENOM_EPS):
        raise DenominatorNearZero("denominator vanished on at least one grid point")
    return np.column_stack([(p[0] * x + p[1] * y + p[2]) / den,
                            (p[3] * x + p[4] * y + p[5]) / den])


def warp_xy(w: WarpParams, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the warp to coordinate arrays without a denominator guard.

    Intended for dense image work where out-of-horizon samples are masked by
    the caller; returns the denominator as well.
    """
    p = w.p
    den = p[6] * x + p[7] * y + 1.0
    return ((p[0] * x + p[1] * y + p[2]) / den,
            (p[3] * x + p[4] * y + p[5]) / den)


def compose(w_a: WarpParams, w_b: WarpParams) -> WarpParams:
    """Warp performing ``w_b`` first, then ``w_a`` (i.e. w_a ∘ w_b)."""
    mat = w_a.matrix() @ w_b.matrix()
    if abs(mat[2, 2]) < DET_EPS:
        raise DenominatorNearZero("composition left (3,3) entry near zero")
    both_affine = w_a.is_affine() and w_b.is_affine()
    kind = WarpKind.AFFINE if both_affine else WarpKind.HOMOGRAPHY
    return WarpParams.from_matrix(mat, kind)


def invert(w: WarpParams) -> WarpParams:
    """Inverse warp; affine inputs invert in closed form to stay exactly affine."""
    p = w.p
    if w.is_affine():
        det = p[0] * p[4] - p[1] * p[3]
        if abs(det) <= DET_EPS:
            raise SingularWarp("affine linear part is singular")
        a, b, d, e = p[4] / det, -p[1] / det, -p[3] / det, p[0] / det
        c = -(a * p[2] + b * p[5])
        f = -(d * p[2] + e * p[5])
        return WarpParams((a, b, c, d, e, f, 0.0, 0.0), WarpKind.AFFINE)
    try:
        inv = np.linalg.inv(w.matrix())
    except np.linalg.LinAlgError as exc:
        raise SingularWarp(str(exc)) from exc
    return WarpParams.from_matrix(inv, WarpKind.HOMOGRAPHY)


def warp_distance(w1: WarpParams, w2: WarpParams, grid: RefGrid) -> float:
    """Maximum Euclidean deviation between two warps over the grid points."""
    pts = grid.points()
    d = apply_warp_array(w1, pts) - apply_warp_array(w2, pts)
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))
