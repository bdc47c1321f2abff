"""Dense pairwise registration by gradient-orientation alignment.

The primary objective is the mean squared sine of the angle between the unit
gradient of the fixed image and the gradient of the warped moving image,
minimized with a damped Gauss-Newton iteration (forward-additive
Lucas-Kanade). Because only sin^2 of the angle enters, the objective depends
on gradient orientation modulo pi, not direction, and is invariant to
monotone affine intensity changes.

Two baselines share the same optimizer: maximizing the cosine of the gradient
angle difference (direction-sensitive), and normalized cross-correlation of
intensities.

Residuals are s_i = sin(dtheta_i). Their analytic Jacobian uses the chain
rule on the precomputed gradient of the *unwarped* moving image: the warped
gradient at x is g_m = J_w(x)^T G(w(x)) with J_w the spatial Jacobian of the
warp, so

    d s_i / d p_j = cos(dtheta_i) * (g_mx d g_my/dp_j - g_my d g_mx/dp_j) / |g_m|^2

which is what the Gauss-Newton normal equations consume. sin/cos of the angle
difference are always obtained from cross/dot products of the gradient
vectors, never from arctan subtraction.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .errors import (
    InsufficientOverlap,
    NormalEquationsSingular,
    SingularWarp,
    ZeroVariance,
)
from .geometry import WarpKind, WarpParams
from .imageproc import (
    GRAD_EPS_DEFAULT,
    BilinearSampler,
    GradientField,
    Pyramid,
    PyramidLevel,
    erode_mask,
    raw_gradients,
)

log = logging.getLogger(__name__)

LAMBDA_INIT = 1e-3
LAMBDA_MAX = 1e8
TINY = 1e-300


class Objective(str, enum.Enum):
    SIN_SQ_ORIENTATION = "sin_sq_orientation"
    COS_CORRELATION = "cos_correlation"
    NCC = "ncc"


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD_INVERTED = "backward_inverted"


@dataclass
class RegistrationConfig:
    num_levels: int = 6
    max_iters_per_level: int = 50
    param_tol: float = 1e-7
    cost_tol: float = 1e-9
    warp_kind: WarpKind = WarpKind.AFFINE
    bidirectional: bool = True
    objective: Objective = Objective.SIN_SQ_ORIENTATION
    grad_eps: float = GRAD_EPS_DEFAULT
    min_overlap_frac: float = 0.25
    level_gate: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_levels < 1:
            raise ValueError("num_levels must be >= 1")
        for name in ("max_iters_per_level", "param_tol", "cost_tol", "grad_eps", "min_overlap_frac"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LevelDiag:
    level: int
    iters: int
    cost: float
    rejected: bool = False


@dataclass
class RegistrationResult:
    """Estimated warp mapping fixed-domain points into the moving domain."""

    warp: WarpParams
    final_cost: float
    num_valid_pixels: int
    per_level: list[LevelDiag]
    direction: Direction
    objective: Objective

    def to_json(self) -> dict:
        return {
            "warp": self.warp.to_json(),
            "final_cost": self.final_cost,
            "num_valid_pixels": self.num_valid_pixels,
            "per_level": [{"level": d.level, "iters": d.iters, "cost": d.cost,
                           "rejected": d.rejected} for d in self.per_level],
            "direction": self.direction.value,
            "objective": self.objective.value,
        }


# ---------------------------------------------------------------------------
# moving-image precomputation


@dataclass
class MovingPlane:
    """Per-level moving-image data reused across iterations.

    Raw (un-normalized) central-difference gradients feed the residuals and
    the analytic Jacobian; the unit field (from the level's GradientField)
    feeds the validity gate so the usable pixel set is invariant to positive
    affine intensity changes of the moving image. ``valid`` is the gradient
    validity intersected with the frame mask eroded one pixel further, so all
    bilinear fetches read well-defined values.
    """

    gray: np.ndarray
    valid: np.ndarray       # gradient validity, for the orientation objectives
    mask_valid: np.ndarray  # frame-mask validity only, for intensity objectives
    gx: np.ndarray
    gy: np.ndarray
    unit_gx: np.ndarray
    unit_gy: np.ndarray

    @classmethod
    def from_level(cls, level: PyramidLevel) -> "MovingPlane":
        gx, gy = raw_gradients(level.gray)
        fld = level.gradients
        eroded = erode_mask(level.mask, 2)
        return cls(gray=level.gray, valid=eroded & fld.valid, mask_valid=eroded,
                   gx=gx, gy=gy, unit_gx=fld.gx, unit_gy=fld.gy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.gray.shape


def _fixed_pixels(fld: GradientField) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    ys, xs = np.nonzero(fld.valid)
    return xs.astype(np.float64), ys.astype(np.float64), fld.gx[ys, xs], fld.gy[ys, xs]


# ---------------------------------------------------------------------------
# warp-space derivatives


class _WarpEval:
    """Warped coordinates, warp Jacobians and their parameter derivatives.

    The generic homography formulas are used throughout; with p7 = p8 = 0
    they collapse to the affine case (constant spatial Jacobian). ``jw`` is
    the 2x2 spatial Jacobian per pixel as (a11, a12, a21, a22); ``dw[j]`` is
    d w / d p_j as (dwx, dwy); ``djw[j]`` is d jw / d p_j in the same 4-tuple
    layout (entries may be scalars for broadcastable constants).
    """

    def __init__(self, w: WarpParams, xs: np.ndarray, ys: np.ndarray,
                 n_params: int, want_derivs: bool = True):
        p1, p2, p3, p4, p5, p6, p7, p8 = w.p
        den = p7 * xs + p8 * ys + 1.0
        self.ok_den = np.abs(den) > geometry.DENOM_EPS
        inv = np.where(self.ok_den, 1.0 / np.where(self.ok_den, den, 1.0), 0.0)
        wx = (p1 * xs + p2 * ys + p3) * inv
        wy = (p4 * xs + p5 * ys + p6) * inv
        self.wx, self.wy = wx, wy
        self.jw = ((p1 - wx * p7) * inv, (p2 - wx * p8) * inv,
                   (p4 - wy * p7) * inv, (p5 - wy * p8) * inv)
        if not want_derivs:
            return

        x_i, y_i = xs * inv, ys * inv
        dw = [(x_i, 0.0), (y_i, 0.0), (inv, 0.0),
              (0.0, x_i), (0.0, y_i), (0.0, inv)]
        if n_params == 8:
            dw.append((-x_i * wx, -x_i * wy))
            dw.append((-y_i * wx, -y_i * wy))
        self.dw = dw

        a11, a12, a21, a22 = self.jw
        djw = []
        for j in range(min(n_params, 6)):
            dwx, dwy = dw[j]
            e11 = 1.0 if j == 0 else 0.0
            e12 = 1.0 if j == 1 else 0.0
            e21 = 1.0 if j == 3 else 0.0
            e22 = 1.0 if j == 4 else 0.0
            djw.append(((e11 - dwx * p7) * inv, (e12 - dwx * p8) * inv,
                        (e21 - dwy * p7) * inv, (e22 - dwy * p8) * inv))
        if n_params == 8:
            dwx, dwy = dw[6]
            djw.append((((-dwx * p7 - wx) * inv - a11 * x_i),
                        ((-dwx * p8) * inv - a12 * x_i),
                        ((-dwy * p7 - wy) * inv - a21 * x_i),
                        ((-dwy * p8) * inv - a22 * x_i)))
            dwx, dwy = dw[7]
            djw.append((((-dwx * p7) * inv - a11 * y_i),
                        ((-dwx * p8 - wx) * inv - a12 * y_i),
                        ((-dwy * p7) * inv - a21 * y_i),
                        ((-dwy * p8 - wy) * inv - a22 * y_i)))
        self.djw = djw


# ---------------------------------------------------------------------------
# residual evaluations (one per objective)


@dataclass
class ResidualEval:
    cost: float                 # internal least-squares cost (mean r^2)
    residuals: np.ndarray
    jacobian: Optional[np.ndarray]
    pixels: tuple               # (xs, ys, f0, f1) evaluation set, reusable
    n_valid: int


def _n_params(kind: WarpKind) -> int:
    return 6 if kind == WarpKind.AFFINE else 8


def _orientation_core(fixed: GradientField, moving: MovingPlane, w: WarpParams,
                      pixels: tuple | None, with_jacobian: bool,
                      grad_eps: float, min_overlap: int
                      ) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray], tuple]:
    """sin/cos of the angle difference plus d(dtheta)/dp_j columns.

    When ``pixels`` (from a previous evaluation) is given, the same pixel set
    is reused without re-filtering, which keeps finite-difference probes of
    the residuals on a fixed domain.
    """
    n_par = _n_params(w.kind)
    filtering = pixels is None
    if filtering:
        xs, ys, gfx, gfy = _fixed_pixels(fixed)
    else:
        xs, ys, gfx, gfy = pixels

    we = _WarpEval(w, xs, ys, n_par, want_derivs=with_jacobian)
    h, wdt = moving.shape
    sampler = BilinearSampler(we.wx, we.wy, h, wdt)

    if filtering:
        ok = we.ok_den & sampler.fully_valid(moving.valid)
        # contrast-invariant gate: interpolate the unit field, not raw magnitudes
        ok &= np.hypot(sampler.sample(moving.unit_gx),
                       sampler.sample(moving.unit_gy)) >= grad_eps
        if int(ok.sum()) < max(min_overlap, 1):
            raise InsufficientOverlap(int(ok.sum()), max(min_overlap, 1))
        xs, ys, gfx, gfy = xs[ok], ys[ok], gfx[ok], gfy[ok]
        we = _WarpEval(w, xs, ys, n_par, want_derivs=with_jacobian)
        sampler = BilinearSampler(we.wx, we.wy, h, wdt)
    if with_jacobian:
        # spatial derivatives of the *interpolants*, so the Jacobian is the
        # exact derivative of the discrete residual within a bilinear cell
        gx, gxx, gxy = sampler.sample_with_gradient(moving.gx)
        gy, gyx, gyy = sampler.sample_with_gradient(moving.gy)
    else:
        gx = sampler.sample(moving.gx)
        gy = sampler.sample(moving.gy)

    a11, a12, a21, a22 = we.jw
    gmx = a11 * gx + a21 * gy
    gmy = a12 * gx + a22 * gy
    nrm2 = np.maximum(gmx * gmx + gmy * gmy, TINY)
    nrm = np.sqrt(nrm2)
    sin_dt = (gfx * gmy - gfy * gmx) / nrm
    cos_dt = (gfx * gmx + gfy * gmy) / nrm

    dtheta = None
    if with_jacobian:
        dtheta = np.empty((xs.size, n_par))
        for j in range(n_par):
            dwx, dwy = we.dw[j]
            d11, d12, d21, d22 = we.djw[j]
            dgx = gxx * dwx + gxy * dwy
            dgy = gyx * dwx + gyy * dwy
            dgmx = d11 * gx + d21 * gy + a11 * dgx + a21 * dgy
            dgmy = d12 * gx + d22 * gy + a12 * dgx + a22 * dgy
            dtheta[:, j] = (gmx * dgmy - gmy * dgmx) / nrm2

    return sin_dt, cos_dt, dtheta, (xs, ys, gfx, gfy)


def orientation_residuals(fixed: GradientField, moving: MovingPlane, w: WarpParams,
                          pixels: tuple | None = None, with_jacobian: bool = True,
                          grad_eps: float = GRAD_EPS_DEFAULT,
                          min_overlap: int = 0) -> ResidualEval:
    """Residuals s_i = sin(dtheta_i) with J_ij = cos(dtheta_i) d(dtheta_i)/dp_j."""
    sin_dt, cos_dt, dtheta, pix = _orientation_core(
        fixed, moving, w, pixels, with_jacobian, grad_eps, min_overlap)
    jac = cos_dt[:, None] * dtheta if dtheta is not None else None
    return ResidualEval(cost=float(np.mean(sin_dt ** 2)), residuals=sin_dt,
                        jacobian=jac, pixels=pix, n_valid=pix[0].size)


def correlation_residuals(fixed: GradientField, moving: MovingPlane, w: WarpParams,
                          pixels: tuple | None = None, with_jacobian: bool = True,
                          grad_eps: float = GRAD_EPS_DEFAULT,
                          min_overlap: int = 0) -> ResidualEval:
    """Least-squares form of gradient-correlation maximization.

    r_i = 2 sin(dtheta_i / 2), so sum r^2 = sum 2 (1 - cos dtheta): the
    minimizers coincide with those of the correlation objective.
    """
    sin_dt, cos_dt, dtheta, pix = _orientation_core(
        fixed, moving, w, pixels, with_jacobian, grad_eps, min_overlap)
    sign = np.where(sin_dt >= 0.0, 1.0, -1.0)
    r = 2.0 * sign * np.sqrt(np.clip((1.0 - cos_dt) / 2.0, 0.0, 1.0))
    jac = None
    if dtheta is not None:
        chalf = np.sqrt(np.clip((1.0 + cos_dt) / 2.0, 0.0, 1.0))
        jac = chalf[:, None] * dtheta
    return ResidualEval(cost=float(np.mean(r * r)), residuals=r, jacobian=jac,
                        pixels=pix, n_valid=pix[0].size)


def ncc_residuals(fixed_level: PyramidLevel, moving: MovingPlane, w: WarpParams,
                  pixels: tuple | None = None, with_jacobian: bool = True,
                  min_overlap: int = 0) -> ResidualEval:
    """Zero-normalized SSD residuals whose minimum maximizes NCC.

    r_i = (f_i - mean_f) - (std_f / std_g)(g_i - mean_g) with statistics over
    the current overlap; means and stds are held fixed inside one linearization
    (the usual Gauss-Newton treatment).
    """
    n_par = _n_params(w.kind)
    filtering = pixels is None
    if filtering:
        ys_i, xs_i = np.nonzero(fixed_level.mask)
        xs, ys = xs_i.astype(np.float64), ys_i.astype(np.float64)
        fvals = fixed_level.gray[ys_i, xs_i]
    else:
        xs, ys, fvals, _ = pixels

    we = _WarpEval(w, xs, ys, n_par, want_derivs=with_jacobian)
    h, wdt = moving.shape
    sampler = BilinearSampler(we.wx, we.wy, h, wdt)
    if filtering:
        ok = we.ok_den & sampler.fully_valid(moving.mask_valid)
        if int(ok.sum()) < max(min_overlap, 1):
            raise InsufficientOverlap(int(ok.sum()), max(min_overlap, 1))
        xs, ys, fvals = xs[ok], ys[ok], fvals[ok]
        we = _WarpEval(w, xs, ys, n_par, want_derivs=with_jacobian)
        sampler = BilinearSampler(we.wx, we.wy, h, wdt)

    g, gx, gy = sampler.sample_with_gradient(moving.gray)
    mu_f, mu_g = float(np.mean(fvals)), float(np.mean(g))
    var_f = float(np.mean((fvals - mu_f) ** 2))
    var_g = float(np.mean((g - mu_g) ** 2))
    if var_f < 1e-12 or var_g < 1e-12:
        raise ZeroVariance("constant patch over the overlap")
    ratio = np.sqrt(var_f / var_g)
    r = (fvals - mu_f) - ratio * (g - mu_g)

    jac = None
    if with_jacobian:
        jac = np.empty((xs.size, n_par))
        for j in range(n_par):
            dwx, dwy = we.dw[j]
            jac[:, j] = -ratio * (gx * dwx + gy * dwy)
    return ResidualEval(cost=float(np.mean(r * r)), residuals=r, jacobian=jac,
                        pixels=(xs, ys, fvals, None), n_valid=xs.size)


def _residual_eval(objective: Objective, fixed_level: PyramidLevel, moving: MovingPlane,
                   w: WarpParams, grad_eps: float, min_overlap: int,
                   pixels: tuple | None = None, with_jacobian: bool = True) -> ResidualEval:
    if objective == Objective.SIN_SQ_ORIENTATION:
        return orientation_residuals(fixed_level.gradients, moving, w, pixels,
                                     with_jacobian, grad_eps, min_overlap)
    if objective == Objective.COS_CORRELATION:
        return correlation_residuals(fixed_level.gradients, moving, w, pixels,
                                     with_jacobian, grad_eps, min_overlap)
    return ncc_residuals(fixed_level, moving, w, pixels, with_jacobian, min_overlap)


# ---------------------------------------------------------------------------
# public cost functions


def _aligned_angle_terms(fixed: GradientField, moving: GradientField, w: WarpParams,
                         grad_eps: float, min_overlap: int | None
                         ) -> tuple[np.ndarray, np.ndarray, int]:
    """sin/cos of the gradient angle difference over the mutual overlap.

    Interpolates the normalized moving field at warped points, renormalizes,
    and transports orientation through the warp's spatial Jacobian so a
    correctly registered rotated pair scores zero misalignment.
    """
    xs, ys, gfx, gfy = _fixed_pixels(fixed)
    required = int(0.25 * xs.size) if min_overlap is None else min_overlap
    we = _WarpEval(w, xs, ys, _n_params(w.kind), want_derivs=False)
    h, wdt = moving.gx.shape
    sampler = BilinearSampler(we.wx, we.wy, h, wdt)
    mx = sampler.sample(moving.gx)
    my = sampler.sample(moving.gy)
    mag = np.hypot(mx, my)
    ok = we.ok_den & sampler.fully_valid(moving.valid) & (mag >= grad_eps)
    n_valid = int(ok.sum())
    if n_valid < max(required, 1):
        raise InsufficientOverlap(n_valid, max(required, 1))
    mx, my, mag = mx[ok], my[ok], mag[ok]
    mx, my = mx / mag, my / mag
    a11, a12, a21, a22 = (a[ok] if isinstance(a, np.ndarray) else a for a in we.jw)
    gmx = a11 * mx + a21 * my
    gmy = a12 * mx + a22 * my
    nrm = np.sqrt(np.maximum(gmx * gmx + gmy * gmy, TINY))
    gmx, gmy = gmx / nrm, gmy / nrm
    gfx, gfy = gfx[ok], gfy[ok]
    sin_dt = gfx * gmy - gfy * gmx
    cos_dt = gfx * gmx + gfy * gmy
    return sin_dt, cos_dt, n_valid


def orientation_cost(fixed: GradientField, moving: GradientField, w: WarpParams,
                     grad_eps: float = GRAD_EPS_DEFAULT,
                     min_overlap: int | None = None) -> tuple[float, int]:
    """Mean sin^2 of the gradient angle difference (0 = aligned, orientation
    modulo pi)."""
    sin_dt, _, n_valid = _aligned_angle_terms(fixed, moving, w, grad_eps, min_overlap)
    return float(np.mean(sin_dt ** 2)), n_valid


def correlation_cost(fixed: GradientField, moving: GradientField, w: WarpParams,
                     grad_eps: float = GRAD_EPS_DEFAULT,
                     min_overlap: int | None = None) -> tuple[float, int]:
    """Negated mean cosine of the gradient angle difference (-1 = aligned,
    direction-sensitive)."""
    _, cos_dt, n_valid = _aligned_angle_terms(fixed, moving, w, grad_eps, min_overlap)
    return float(-np.mean(cos_dt)), n_valid


def ncc_cost(fixed_gray: np.ndarray, moving_gray: np.ndarray, w: WarpParams,
             fixed_mask: np.ndarray | None = None, moving_mask: np.ndarray | None = None,
             min_overlap: int | None = None) -> tuple[float, int]:
    """Negated normalized cross-correlation over the warped overlap."""
    if fixed_mask is None:
        fixed_mask = np.ones(fixed_gray.shape, dtype=bool)
    if moving_mask is None:
        moving_mask = np.ones(moving_gray.shape, dtype=bool)
    ys_i, xs_i = np.nonzero(fixed_mask)
    required = int(0.25 * xs_i.size) if min_overlap is None else min_overlap
    xs, ys = xs_i.astype(np.float64), ys_i.astype(np.float64)
    we = _WarpEval(w, xs, ys, _n_params(w.kind), want_derivs=False)
    h, wdt = moving_gray.shape
    sampler = BilinearSampler(we.wx, we.wy, h, wdt)
    ok = we.ok_den & sampler.fully_valid(moving_mask)
    n_valid = int(ok.sum())
    if n_valid < max(required, 1):
        raise InsufficientOverlap(n_valid, max(required, 1))
    f = fixed_gray[ys_i, xs_i][ok]
    g = sampler.sample(moving_gray)[ok]
    f = f - f.mean()
    g = g - g.mean()
    var_f, var_g = float(np.mean(f * f)), float(np.mean(g * g))
    if var_f < 1e-12 or var_g < 1e-12:
        raise ZeroVariance("constant patch over the overlap")
    ncc = float(np.mean(f * g) / np.sqrt(var_f * var_g))
    return -ncc, n_valid


def objective_cost(objective: Objective, fixed_level: PyramidLevel,
                   moving_level: PyramidLevel, w: WarpParams,
                   grad_eps: float = GRAD_EPS_DEFAULT,
                   min_overlap: int | None = None) -> tuple[float, int]:
    """The reported (public) cost of the given objective at a warp."""
    if objective == Objective.SIN_SQ_ORIENTATION:
        return orientation_cost(fixed_level.gradients, moving_level.gradients, w,
                                grad_eps, min_overlap)
    if objective == Objective.COS_CORRELATION:
        return correlation_cost(fixed_level.gradients, moving_level.gradients, w,
                                grad_eps, min_overlap)
    return ncc_cost(fixed_level.gray, moving_level.gray, w,
                    fixed_level.mask, moving_level.mask, min_overlap)


# ---------------------------------------------------------------------------
# Gauss-Newton optimizer


@dataclass
class GNStep:
    p_next: WarpParams
    cost: float
    cost_next: float
    accepted: bool
    lam_next: float
    step_norm: float


def _solve_damped(jac: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    jtj = jac.T @ jac
    jtr = jac.T @ r
    n = jtj.shape[0]
    delta = np.linalg.solve(jtj + lam * np.eye(n), jtr)
    if not np.all(np.isfinite(delta)):
        raise np.linalg.LinAlgError("non-finite update")
    return delta


def _apply_update(p: WarpParams, delta: np.ndarray) -> WarpParams:
    vec = p.as_vector()
    vec[: delta.size] -= delta
    return WarpParams(tuple(vec), p.kind)


def gauss_newton_step(fixed: PyramidLevel, moving: PyramidLevel, p: WarpParams,
                      objective: Objective = Objective.SIN_SQ_ORIENTATION,
                      lam: float = LAMBDA_INIT, grad_eps: float = GRAD_EPS_DEFAULT,
                      min_overlap: int | None = None,
                      moving_plane: MovingPlane | None = None) -> GNStep:
    """One damped Gauss-Newton update p <- p - (J^T J + lam I)^-1 J^T s.

    The damping factor halves on a cost decrease and quadruples (with the
    step rejected) on an increase; escalation past the damping ceiling with
    an unsolvable system raises :class:`NormalEquationsSingular`.
    """
    plane = moving_plane or MovingPlane.from_level(moving)
    if min_overlap is None:
        min_overlap = int(0.25 * np.count_nonzero(fixed.gradients.valid))
    ev = _residual_eval(objective, fixed, plane, p, grad_eps, min_overlap)
    while True:
        try:
            delta = _solve_damped(ev.jacobian, ev.residuals, lam)
        except np.linalg.LinAlgError:
            lam *= 4.0
            if lam > LAMBDA_MAX:
                raise NormalEquationsSingular(
                    f"normal equations unsolvable at damping {lam:.1e}") from None
            continue
        try:
            p_try = _apply_update(p, delta)
            ev_try = _residual_eval(objective, fixed, plane, p_try, grad_eps,
                                    min_overlap, with_jacobian=False)
            cost_try = ev_try.cost
        except (SingularWarp, InsufficientOverlap, ZeroVariance):
            cost_try = np.inf
        if cost_try < ev.cost:
            return GNStep(p_next=p_try, cost=ev.cost, cost_next=cost_try,
                          accepted=True, lam_next=max(lam * 0.5, 1e-12),
                          step_norm=float(np.linalg.norm(delta)))
        lam *= 4.0
        if lam > LAMBDA_MAX:
            return GNStep(p_next=p, cost=ev.cost, cost_next=ev.cost, accepted=False,
                          lam_next=lam, step_norm=float(np.linalg.norm(delta)))


def _optimize_level(fixed: PyramidLevel, plane: MovingPlane, p: WarpParams,
                    cfg: RegistrationConfig) -> tuple[WarpParams, int, float]:
    """Run damped Gauss-Newton to convergence on one pyramid level."""
    min_overlap = int(cfg.min_overlap_frac * np.count_nonzero(fixed.gradients.valid))
    lam = LAMBDA_INIT
    ev = _residual_eval(cfg.objective, fixed, plane, p, cfg.grad_eps, min_overlap)
    iters = 0
    for iters in range(1, cfg.max_iters_per_level + 1):
        accepted = False
        step_norm = 0.0
        while True:
            try:
                delta = _solve_damped(ev.jacobian, ev.residuals, lam)
            except np.linalg.LinAlgError:
                lam *= 4.0
                if lam > LAMBDA_MAX:
                    raise NormalEquationsSingular(
                        f"normal equations unsolvable at damping {lam:.1e}") from None
                continue
            step_norm = float(np.linalg.norm(delta))
            try:
                p_try = _apply_update(p, delta)
                ev_try = _residual_eval(cfg.objective, fixed, plane, p_try,
                                        cfg.grad_eps, min_overlap)
                cost_try = ev_try.cost
            except (SingularWarp, InsufficientOverlap, ZeroVariance):
                cost_try = np.inf
            if cost_try < ev.cost:
                accepted = True
                break
            lam *= 4.0
            if lam > LAMBDA_MAX:
                break
        if not accepted:
            break
        rel_decrease = (ev.cost - ev_try.cost) / max(ev.cost, TINY)
        p, ev = p_try, ev_try
        lam = max(lam * 0.5, 1e-12)
        if step_norm < cfg.param_tol or rel_decrease < cfg.cost_tol:
            break
    return p, iters, ev.cost


def scale_warp(w: WarpParams, factor: float) -> WarpParams:
    """Conjugate the warp by a uniform coordinate scaling.

    Moving one pyramid level finer (factor 2) doubles the translation terms
    p3, p6 and halves the projective terms p7, p8; linear terms are
    unchanged.
    """
    p = list(w.p)
    p[2] *= factor
    p[5] *= factor
    p[6] /= factor
    p[7] /= factor
    return WarpParams(tuple(p), w.kind)


def _register_direction(fixed: Pyramid, moving: Pyramid, cfg: RegistrationConfig,
                        init: WarpParams, gate_cfg, seed_key: tuple
                        ) -> tuple[WarpParams, float, int, list[LevelDiag]]:
    from .gate import level_gate_ok  # deferred: gate builds on this module

    levels = min(fixed.num_levels, moving.num_levels, cfg.num_levels)
    p = scale_warp(init, 1.0 / (2 ** (levels - 1)))
    diags: list[LevelDiag] = []
    for lvl in range(levels - 1, -1, -1):
        fixed_level = fixed.levels[lvl]
        plane = MovingPlane.from_level(moving.levels[lvl])
        rejected = False
        try:
            p, iters, cost = _optimize_level(fixed_level, plane, p, cfg)
        except InsufficientOverlap:
            if lvl == 0:
                raise
            p, iters, cost = WarpParams.identity(), 0, float("nan")
            rejected = True
        if cfg.level_gate and lvl > 0 and not rejected:
            if not level_gate_ok(fixed_level, moving.levels[lvl], p, cfg,
                                 gate_cfg, seed_key + (lvl,)):
                p = WarpParams.identity()
                rejected = True
        diags.append(LevelDiag(level=lvl, iters=iters, cost=cost, rejected=rejected))
        if lvl > 0:
            p = scale_warp(p, 2.0)

    cost_pub, n_valid = objective_cost(cfg.objective, fixed.levels[0],
                                       moving.levels[0], p, cfg.grad_eps)
    return p, cost_pub, n_valid, diags


def register_pair(fixed: Pyramid, moving: Pyramid, cfg: RegistrationConfig | None = None,
                  init: WarpParams | None = None, gate_cfg=None,
                  seed_key: tuple = ()) -> RegistrationResult:
    """Coarse-to-fine registration of a frame pair.

    Returns the warp mapping fixed-domain points into the moving domain. With
    ``cfg.bidirectional`` the pair is also registered with the roles swapped
    and the run with the lower final cost wins (inverted back into the
    caller's fixed-to-moving sense when the backward run wins).

    Full-homography mode is supported but, lacking a closed-form initializer,
    expects the caller to pass an ``init`` already in the convergence basin;
    the affine default converges from the identity.
    """
    cfg = cfg or RegistrationConfig()
    if fixed.num_levels != moving.num_levels:
        raise ValueError("pyramids must have equal depth")
    if init is None:
        init = WarpParams.identity()
    if cfg.warp_kind == WarpKind.HOMOGRAPHY and init.kind == WarpKind.AFFINE:
        init = WarpParams(init.p, WarpKind.HOMOGRAPHY)

    w_f, cost_f, nv_f, diag_f = _register_direction(
        fixed, moving, cfg, init, gate_cfg, seed_key + ("f",))
    if not cfg.bidirectional:
        return RegistrationResult(warp=w_f, final_cost=cost_f, num_valid_pixels=nv_f,
                                  per_level=diag_f, direction=Direction.FORWARD,
                                  objective=cfg.objective)

    try:
        w_b, cost_b, nv_b, diag_b = _register_direction(
            moving, fixed, cfg, geometry.invert(init), gate_cfg, seed_key + ("b",))
    except (InsufficientOverlap, NormalEquationsSingular, SingularWarp, ZeroVariance):
        w_b, cost_b = None, np.inf

    if w_b is not None and cost_b < cost_f:
        return RegistrationResult(warp=geometry.invert(w_b), final_cost=cost_b,
                                  num_valid_pixels=nv_b, per_level=diag_b,
                                  direction=Direction.BACKWARD_INVERTED,
                                  objective=cfg.objective)
    return RegistrationResult(warp=w_f, final_cost=cost_f, num_valid_pixels=nv_f,
                              per_level=diag_f, direction=Direction.FORWARD,
                              objective=cfg.objective)
