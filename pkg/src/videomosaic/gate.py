"""Accept/reject test for pairwise registrations.

A registration becomes a pose-graph constraint only if (a) its warp stays
close enough to the identity over a reference grid and (b) its cost beats a
low quantile of the costs obtained with random warps sampled around the
identity; everything else is rejected with a reason code. The same check,
scaled to the level geometry, is reused for per-level rejection inside the
coarse-to-fine registration.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass

import numpy as np

from . import register as reg
from .errors import InsufficientOverlap, ZeroVariance
from .geometry import RefGrid, WarpParams, warp_distance
from .imageproc import Pyramid, PyramidLevel
from .register import RegistrationResult


class GateReason(str, enum.Enum):
    OK = "ok"
    TOO_FAR_FROM_IDENTITY = "too_far_from_identity"
    COST_NOT_DISCRIMINATIVE = "cost_not_discriminative"
    REGISTRATION_FAILED = "registration_failed"


@dataclass
class GateConfig:
    max_identity_distance: float | None = None  # None: 0.35 x frame width
    num_random_warps: int = 30
    random_translation_sigma: float = 5.0
    random_linear_sigma: float = 0.02
    cost_quantile: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_random_warps <= 0 or self.random_translation_sigma <= 0 \
                or self.random_linear_sigma <= 0 or self.cost_quantile <= 0:
            raise ValueError("gate parameters must be positive")
        if self.cost_quantile >= 0.5:
            raise ValueError("cost_quantile must be below 0.5")
        if self.max_identity_distance is not None and self.max_identity_distance <= 0:
            raise ValueError("max_identity_distance must be positive")

    def identity_limit(self, frame_width: int, scale: float = 1.0) -> float:
        """Identity-proximity threshold in pixels.

        The default tracks the width it is asked about (so per-level use just
        passes the level width); an explicit absolute limit is rescaled by
        ``scale`` instead.
        """
        if self.max_identity_distance is not None:
            return self.max_identity_distance * scale
        return 0.35 * frame_width


@dataclass
class GateVerdict:
    accepted: bool
    reason: GateReason
    registration_cost: float
    random_cost_quantile_value: float

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "reason": self.reason.value,
            "registration_cost": self.registration_cost,
            "random_cost_quantile_value": self.random_cost_quantile_value,
        }


def _seed_ints(seed: int, key: tuple = ()) -> list[int]:
    """Flatten a mixed int/str key into a deterministic SeedSequence entropy list."""
    out = [int(seed) & 0xFFFFFFFF]
    for part in key:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode()))
        else:
            out.append(int(part) & 0xFFFFFFFF)
    return out


def random_warps_near_identity(rng: np.random.Generator, count: int,
                               translation_sigma: float,
                               linear_sigma: float) -> list[WarpParams]:
    """Identity plus Gaussian perturbations of the linear and translation parts."""
    warps = []
    for _ in range(count):
        lin = rng.normal(0.0, linear_sigma, size=4)
        trans = rng.normal(0.0, translation_sigma, size=2)
        warps.append(WarpParams.affine(1.0 + lin[0], lin[1], trans[0],
                                       lin[2], 1.0 + lin[3], trans[1]))
    return warps


def _random_cost_quantile(cost_fn, rng: np.random.Generator, cfg: GateConfig,
                          translation_sigma: float) -> float:
    costs = []
    for w in random_warps_near_identity(rng, cfg.num_random_warps,
                                        translation_sigma, cfg.random_linear_sigma):
        try:
            costs.append(cost_fn(w))
        except (InsufficientOverlap, ZeroVariance):
            costs.append(np.inf)
    return float(np.quantile(costs, cfg.cost_quantile))


def gate_registration(result: RegistrationResult | None, fixed: Pyramid, moving: Pyramid,
                      grid: RefGrid, cfg: GateConfig) -> GateVerdict:
    """Final verdict on a registration, evaluated at the finest pyramid level.

    The cost criterion always uses the gradient-orientation cost in the
    fixed-to-moving sense at the returned warp; for a forward run with the
    orientation objective this equals the result's final cost.
    """
    if result is None:
        return GateVerdict(False, GateReason.REGISTRATION_FAILED,
                           float("nan"), float("nan"))

    fixed0, moving0 = fixed.levels[0], moving.levels[0]
    ident_limit = cfg.identity_limit(fixed0.gray.shape[1])
    dist = warp_distance(result.warp, WarpParams.identity(), grid)

    def cost_fn(w: WarpParams) -> float:
        return reg.orientation_cost(fixed0.gradients, moving0.gradients, w)[0]

    try:
        registration_cost = cost_fn(result.warp)
    except (InsufficientOverlap, ZeroVariance):
        registration_cost = float("inf")

    rng = np.random.default_rng(_seed_ints(cfg.rng_seed))
    quantile_value = _random_cost_quantile(cost_fn, rng, cfg, cfg.random_translation_sigma)

    if dist > ident_limit:
        return GateVerdict(False, GateReason.TOO_FAR_FROM_IDENTITY,
                           registration_cost, quantile_value)
    if not registration_cost < quantile_value:
        return GateVerdict(False, GateReason.COST_NOT_DISCRIMINATIVE,
                           registration_cost, quantile_value)
    return GateVerdict(True, GateReason.OK, registration_cost, quantile_value)


def level_gate_ok(fixed_level: PyramidLevel, moving_level: PyramidLevel,
                  warp: WarpParams, reg_cfg, gate_cfg: GateConfig | None,
                  seed_key: tuple) -> bool:
    """Per-level variant used inside coarse-to-fine registration.

    Thresholds and the random translation sigma shrink with the level scale;
    the cost comparison uses the objective being optimized so non-default
    objectives are gated on their own scale.
    """
    cfg = gate_cfg or GateConfig(rng_seed=reg_cfg.rng_seed)
    level = fixed_level.gradients.level
    scale = 2.0 ** (-level)
    h, w = fixed_level.gray.shape
    grid = RefGrid(w, h, step=3)
    if warp_distance(warp, WarpParams.identity(), grid) > cfg.identity_limit(w, scale):
        return False

    def cost_fn(wp: WarpParams) -> float:
        return reg.objective_cost(reg_cfg.objective, fixed_level, moving_level,
                                  wp, reg_cfg.grad_eps)[0]

    try:
        cost = cost_fn(warp)
    except (InsufficientOverlap, ZeroVariance):
        return False
    rng = np.random.default_rng(_seed_ints(cfg.rng_seed, seed_key))
    quantile_value = _random_cost_quantile(
        cost_fn, rng, cfg, cfg.random_translation_sigma * scale)
    return cost < quantile_value
