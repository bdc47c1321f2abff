"""Global placement of frames from pairwise constraints.

Frame placements are affine global warps W_i mapping absolute (mosaic)
coordinates into each frame, with W_0 pinned to the identity as the gauge. An
accepted pairwise constraint (i, j, w_hat) asserts W_i o W_j^-1 == w_hat; the
sequential chain composes consecutive constraints as the classic (drifting)
initializer, and bundle adjustment minimizes the summed squared grid-point
deviations

    sum_{(i,j)} sum_{x in grid} || (W_i o W_j^-1)(x) - w_hat_ij(x) ||^2

with Levenberg-Marquardt over all free W_i. The max-deviation warp distance
is kept for reporting and gating; the sum-of-squares above is its
least-squares relaxation, which is what a Gauss-Newton-family solver needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DisconnectedGraph, SolverDiverged
from .geometry import RefGrid, WarpKind, WarpParams, apply_warp_array, compose, invert, warp_distance

log = logging.getLogger(__name__)


@dataclass
class Constraint:
    i: int
    j: int
    warp: WarpParams            # w_hat_ij, frame-j domain into frame-i domain
    accepted: bool = True
    gate_reason: str | None = None

    def to_json(self) -> dict:
        return {"i": self.i, "j": self.j, "warp": self.warp.to_json(),
                "accepted": self.accepted, "gate_reason": self.gate_reason}


@dataclass
class PoseGraph:
    num_frames: int
    constraints: list[Constraint] = field(default_factory=list)
    globals_: list[WarpParams] = field(default_factory=list)
    bridged: list[bool] = field(default_factory=list)
    excluded: list[bool] = field(default_factory=list)
    final_cost: float | None = None
    constraint_distances: list[float] | None = None
    cost_history: list[float] | None = None  # accepted-iteration costs, for diagnostics

    def __post_init__(self):
        for c in self.constraints:
            if c.i == c.j or not (0 <= c.i < self.num_frames) \
                    or not (0 <= c.j < self.num_frames):
                raise ValueError(f"constraint ({c.i}, {c.j}) out of range")
        if not self.globals_:
            self.globals_ = [WarpParams.identity() for _ in range(self.num_frames)]
        if not self.bridged:
            self.bridged = [False] * self.num_frames
        if not self.excluded:
            self.excluded = [False] * self.num_frames

    def to_json(self) -> dict:
        frames = [{"index": k, "warp": g.to_json(), "bridged": self.bridged[k],
                   "excluded": self.excluded[k]} for k, g in enumerate(self.globals_)]
        constraints = [c.to_json() for c in self.constraints]
        if self.constraint_distances is not None:
            for rec, dist in zip(constraints, self.constraint_distances):
                rec["distance"] = None if np.isnan(dist) else dist
        out = {"num_frames": self.num_frames, "frames": frames,
               "constraints": constraints}
        if self.final_cost is not None:
            out["final_cost"] = self.final_cost
        return out


@dataclass
class BundleConfig:
    max_iters: int = 200
    cost_rel_tol: float = 1e-10
    param_tol: float = 1e-9
    solver_grid_step: int = 24
    divergence_guard: float = 1e12
    lambda_init: float = 1e-4


def sequential_chain(constraints: list[Constraint], num_frames: int
                     ) -> tuple[list[WarpParams], list[bool]]:
    """Compose consecutive constraints into global warps.

    W_0 is the identity; W_k = w_hat_{k,k-1} o W_{k-1}. A missing or rejected
    consecutive link bridges the frame at its predecessor's placement and
    flags it (and everything downstream, whose placement rests on the bridge).
    """
    link = {}
    for c in constraints:
        if c.accepted and c.i == c.j + 1:
            link[c.i] = c.warp
    warps = [WarpParams.identity()]
    bridged = [False]
    for k in range(1, num_frames):
        if k in link:
            warps.append(compose(link[k], warps[k - 1]))
            bridged.append(bridged[k - 1])
        else:
            warps.append(warps[k - 1])
            bridged.append(True)
    return warps, bridged


def reachable_frames(constraints: list[Constraint], num_frames: int) -> set[int]:
    """Frames connected to frame 0 through accepted constraints."""
    adj: dict[int, set[int]] = {k: set() for k in range(num_frames)}
    for c in constraints:
        if c.accepted:
            adj[c.i].add(c.j)
            adj[c.j].add(c.i)
    seen = {0}
    stack = [0]
    while stack:
        node = stack.pop()
        for nxt in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


# ---------------------------------------------------------------------------
# Levenberg-Marquardt over affine globals


def _affine_parts(w: WarpParams) -> tuple[np.ndarray, np.ndarray]:
    p = w.p
    return np.array([[p[0], p[1]], [p[3], p[4]]]), np.array([p[2], p[5]])


def _theta_to_parts(theta: np.ndarray, free: list[int], base: list[WarpParams]
                    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    mats, trans = [], []
    slot = {f: k for k, f in enumerate(free)}
    for idx, w in enumerate(base):
        if idx in slot:
            v = theta[6 * slot[idx]: 6 * slot[idx] + 6]
            mats.append(np.array([[v[0], v[1]], [v[3], v[4]]]))
            trans.append(np.array([v[2], v[5]]))
        else:
            m, t = _affine_parts(w)
            mats.append(m)
            trans.append(t)
    return mats, trans


def _residuals_jacobian(theta: np.ndarray, free: list[int], base: list[WarpParams],
                        cons: list[Constraint], targets: list[np.ndarray],
                        pts: np.ndarray, want_jacobian: bool
                        ) -> tuple[np.ndarray, np.ndarray | None]:
    """Stacked grid-point deviations and their analytic Jacobian.

    For r = M_i u + t_i - target with u = M_j^-1 (x - t_j), the frame-i block
    is linear in (M_i, t_i) and the frame-j block follows from
    d(M^-1)/dM = -M^-1 E M^-1. Returns None residuals on a singular M_j so the
    caller can reject the trial step.
    """
    mats, trans = _theta_to_parts(theta, free, base)
    slot = {f: k for k, f in enumerate(free)}
    n = pts.shape[0]
    rows_per = 2 * n
    r = np.empty(rows_per * len(cons))
    jac = np.zeros((rows_per * len(cons), 6 * len(free))) if want_jacobian else None

    for c_idx, c in enumerate(cons):
        m_i, t_i = mats[c.i], trans[c.i]
        m_j, t_j = mats[c.j], trans[c.j]
        det = m_j[0, 0] * m_j[1, 1] - m_j[0, 1] * m_j[1, 0]
        if abs(det) < 1e-12:
            return np.full(1, np.inf), None
        minv = np.array([[m_j[1, 1], -m_j[0, 1]], [-m_j[1, 0], m_j[0, 0]]]) / det
        u = (pts - t_j) @ minv.T
        res = u @ m_i.T + t_i - targets[c_idx]
        r0 = rows_per * c_idx
        r[r0: r0 + n] = res[:, 0]
        r[r0 + n: r0 + rows_per] = res[:, 1]
        if not want_jacobian:
            continue
        if c.i in slot:
            col = 6 * slot[c.i]
            jac[r0: r0 + n, col] = u[:, 0]
            jac[r0: r0 + n, col + 1] = u[:, 1]
            jac[r0: r0 + n, col + 2] = 1.0
            jac[r0 + n: r0 + rows_per, col + 3] = u[:, 0]
            jac[r0 + n: r0 + rows_per, col + 4] = u[:, 1]
            jac[r0 + n: r0 + rows_per, col + 5] = 1.0
        if c.j in slot:
            col = 6 * slot[c.j]
            a1 = m_i @ minv[:, 0]
            a2 = m_i @ minv[:, 1]
            for row_off, comp in ((0, 0), (n, 1)):
                sl = slice(r0 + row_off, r0 + row_off + n)
                jac[sl, col] = -u[:, 0] * a1[comp]
                jac[sl, col + 1] = -u[:, 1] * a1[comp]
                jac[sl, col + 2] = -a1[comp]
                jac[sl, col + 3] = -u[:, 0] * a2[comp]
                jac[sl, col + 4] = -u[:, 1] * a2[comp]
                jac[sl, col + 5] = -a2[comp]
    return r, jac


def bundle_adjust(graph: PoseGraph, grid: RefGrid,
                  lm_config: BundleConfig | None = None) -> PoseGraph:
    """Jointly refine all reachable global warps against accepted constraints.

    Frames not connected to frame 0 through accepted constraints are excluded
    (flagged, untouched, skipped by the compositor) rather than guessed. The
    solver works on a subsampled grid for tractability; the returned
    per-constraint distances are max-deviation values on the full grid.
    """
    cfg = lm_config or BundleConfig()
    for w in graph.globals_:
        if w.kind != WarpKind.AFFINE:
            raise ValueError("bundle adjustment optimizes affine globals only")

    reach = reachable_frames(graph.constraints, graph.num_frames)
    excluded = [k not in reach for k in range(graph.num_frames)]
    active = [c for c in graph.constraints
              if c.accepted and c.i in reach and c.j in reach]
    if graph.num_frames > 1 and not active:
        raise DisconnectedGraph(reach)

    free = sorted(k for k in reach if k != 0)
    out = replace(graph, excluded=excluded)
    if not free:
        out.final_cost = 0.0
        out.constraint_distances = _constraint_distances(out, grid)
        return out

    solver_grid = RefGrid(grid.domain_width, grid.domain_height,
                          step=max(grid.step, cfg.solver_grid_step))
    pts = solver_grid.points()
    targets = [apply_warp_array(c.warp, pts) for c in active]

    base = list(graph.globals_)
    theta = np.concatenate([base[k].as_vector()[:6] for k in free])
    r, jac = _residuals_jacobian(theta, free, base, active, targets, pts, True)
    cost = float(r @ r)
    history = [cost]
    lam = cfg.lambda_init
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        if cost > cfg.divergence_guard:
            raise SolverDiverged(f"bundle cost {cost:.3e} exceeded guard")
        accepted = False
        while True:
            jtj = jac.T @ jac
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), jac.T @ r)
            except np.linalg.LinAlgError:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                lam *= 4.0
                if lam > 1e12:
                    break
                continue
            theta_try = theta - delta
            r_try, _ = _residuals_jacobian(theta_try, free, base, active, targets,
                                           pts, False)
            cost_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else np.inf
            if cost_try < cost:
                accepted = True
                break
            lam *= 4.0
            if lam > 1e12:
                break
        if not accepted:
            break
        step_norm = float(np.linalg.norm(delta))
        rel = (cost - cost_try) / max(cost, 1e-300)
        theta = theta_try
        lam = max(lam * 0.5, 1e-15)
        r, jac = _residuals_jacobian(theta, free, base, active, targets, pts, True)
        cost = float(r @ r)
        history.append(cost)
        if step_norm < cfg.param_tol or rel < cfg.cost_rel_tol:
            break
    log.debug("bundle: %d frames, %d constraints, %d iters, cost %.3e",
              len(free) + 1, len(active), iters, cost)

    mats, trans = _theta_to_parts(theta, free, base)
    new_globals = list(graph.globals_)
    for k in free:
        m, t = mats[k], trans[k]
        new_globals[k] = WarpParams.affine(m[0, 0], m[0, 1], t[0],
                                           m[1, 0], m[1, 1], t[1])
    out = replace(graph, globals_=new_globals, excluded=excluded)
    out.final_cost = cost
    out.cost_history = history
    out.constraint_distances = _constraint_distances(out, grid)
    return out


def _constraint_distances(graph: PoseGraph, grid: RefGrid) -> list[float]:
    """Max-deviation distance of every constraint at the current globals."""
    dists = []
    for c in graph.constraints:
        if graph.excluded[c.i] or graph.excluded[c.j]:
            dists.append(float("nan"))
            continue
        rel = compose(graph.globals_[c.i], invert(graph.globals_[c.j]))
        dists.append(warp_distance(rel, c.warp, grid))
    return dists
