import numpy as np
import pytest

from videomosaic.errors import MosaicError
from videomosaic.gate import GateConfig, GateReason, gate_registration
from videomosaic.geometry import RefGrid, WarpParams
from videomosaic.imageproc import Frame, build_pyramid
from videomosaic.register import (
    Direction,
    Objective,
    RegistrationConfig,
    RegistrationResult,
    register_pair,
)

from conftest import smooth_frame

GRID = RefGrid(96, 96, 3)


def noise_frame(seed: int, size: int = 96) -> Frame:
    rng = np.random.default_rng([seed, 77])
    return Frame(id=0, pixels=rng.integers(0, 256, (size, size, 3), dtype=np.uint8),
                 mask=np.ones((size, size), dtype=bool))


def fake_result(warp: WarpParams, cost: float = 0.0) -> RegistrationResult:
    return RegistrationResult(warp=warp, final_cost=cost, num_valid_pixels=1000,
                              per_level=[], direction=Direction.FORWARD,
                              objective=Objective.SIN_SQ_ORIENTATION)


class TestGateRegistration:
    def test_self_registration_accepted(self):
        pyr = build_pyramid(smooth_frame(0, size=96), 5)
        res = register_pair(pyr, pyr, RegistrationConfig(num_levels=5))
        verdict = gate_registration(res, pyr, pyr, GRID, GateConfig(rng_seed=1))
        assert verdict.accepted
        assert verdict.reason == GateReason.OK
        assert verdict.registration_cost < verdict.random_cost_quantile_value

    def test_full_width_translation_rejected(self):
        pyr = build_pyramid(smooth_frame(1, size=96), 5)
        verdict = gate_registration(fake_result(WarpParams.translation(96.0, 0.0)),
                                    pyr, pyr, GRID, GateConfig(rng_seed=1))
        assert not verdict.accepted
        assert verdict.reason == GateReason.TOO_FAR_FROM_IDENTITY

    def test_failed_registration_reason(self):
        pyr = build_pyramid(smooth_frame(2, size=96), 5)
        verdict = gate_registration(None, pyr, pyr, GRID, GateConfig(rng_seed=1))
        assert not verdict.accepted
        assert verdict.reason == GateReason.REGISTRATION_FAILED

    def test_white_noise_pairs_rejected(self):
        # unrelated frames: best achievable cost is statistically
        # indistinguishable from the random-warp costs
        cfg = RegistrationConfig()
        not_discriminative = 0
        for seed in range(20):
            pa = build_pyramid(noise_frame(seed), 6)
            pb = build_pyramid(noise_frame(seed + 1000), 6)
            gate_cfg = GateConfig(rng_seed=seed)
            try:
                res = register_pair(pa, pb, cfg, gate_cfg=gate_cfg)
            except MosaicError:
                res = None
            verdict = gate_registration(res, pa, pb, GRID, gate_cfg)
            if not verdict.accepted and verdict.reason == GateReason.COST_NOT_DISCRIMINATIVE:
                not_discriminative += 1
        assert not_discriminative >= 18

    def test_determinism(self):
        pyr_a = build_pyramid(smooth_frame(3, size=96), 5)
        pyr_b = build_pyramid(smooth_frame(4, size=96), 5)
        cfg = GateConfig(rng_seed=42)
        res = fake_result(WarpParams.translation(1.0, 1.0), cost=0.2)
        v1 = gate_registration(res, pyr_a, pyr_b, GRID, cfg)
        v2 = gate_registration(res, pyr_a, pyr_b, GRID, cfg)
        assert v1 == v2

    def test_quantile_monotonicity(self):
        # a stricter quantile never converts a rejection into an acceptance
        cases = []
        pyr_good = build_pyramid(smooth_frame(5, size=96), 5)
        res_good = register_pair(pyr_good, pyr_good, RegistrationConfig(num_levels=5))
        cases.append((res_good, pyr_good, pyr_good))
        pa, pb = build_pyramid(noise_frame(7), 5), build_pyramid(noise_frame(1007), 5)
        cases.append((fake_result(WarpParams.identity(), cost=0.45), pa, pb))
        cases.append((fake_result(WarpParams.translation(5.0, -2.0), cost=0.3), pa, pb))
        for res, fixed, moving in cases:
            loose = gate_registration(res, fixed, moving, GRID,
                                      GateConfig(cost_quantile=0.05, rng_seed=9))
            strict = gate_registration(res, fixed, moving, GRID,
                                       GateConfig(cost_quantile=0.02, rng_seed=9))
            if strict.accepted:
                assert loose.accepted


class TestGateConfig:
    def test_identity_limit_default_scales_with_width(self):
        cfg = GateConfig()
        assert cfg.identity_limit(100) == pytest.approx(35.0)
        assert cfg.identity_limit(50) == pytest.approx(17.5)

    def test_explicit_limit(self):
        cfg = GateConfig(max_identity_distance=10.0)
        assert cfg.identity_limit(100) == 10.0

    def test_validation(self):
        with pytest.raises(ValueError):
            GateConfig(cost_quantile=0.6)
        with pytest.raises(ValueError):
            GateConfig(num_random_warps=0)
