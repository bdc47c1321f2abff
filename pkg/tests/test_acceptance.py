"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
pass/fail lines. Every random draw is seeded; the whole suite is
deterministic.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from videomosaic.bundle import Constraint, PoseGraph, bundle_adjust, sequential_chain
from videomosaic.config import PipelineConfig
from videomosaic.errors import MosaicError
from videomosaic.gate import GateConfig, gate_registration
from videomosaic.geometry import RefGrid, WarpParams, compose, invert, warp_distance
from videomosaic.imageproc import Frame, build_pyramid, to_grayscale
from videomosaic.pipeline import run_pipeline
from videomosaic.register import Objective, RegistrationConfig, correlation_cost, \
    orientation_cost, register_pair
from videomosaic.retrieval import build_similarity_matrix, build_vocabulary, \
    compute_signature, extract_descriptors
from videomosaic.synth import (
    PerturbationSpec,
    SceneSpec,
    TrajectoryPattern,
    TrajectorySpec,
    build_trajectory,
    generate_pair,
    generate_sequence,
    ground_truth_error,
    perturb_frame,
)

from conftest import smooth_frame
from test_register import jacobian_fd_rel_error

GRID = RefGrid(96, 96, 3)


def report(name: str, passed: bool, detail: str):
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    assert passed, f"{name}: {detail}"


def seeded_affine(seed: int, half_translations: bool = False) -> WarpParams:
    rng = np.random.default_rng([seed, 9])
    if half_translations and seed % 2 == 0:
        return WarpParams.translation(rng.uniform(-6, 6) + 0.5,
                                      rng.uniform(-6, 6) + 0.5)
    return WarpParams.similarity(np.deg2rad(rng.uniform(-5, 5)),
                                 rng.uniform(0.97, 1.03),
                                 rng.uniform(-6, 6), rng.uniform(-6, 6),
                                 center=(47.5, 47.5))


def test_criterion_1_jacobian_matches_finite_differences():
    """Analytic residual Jacobian vs central differences (h=1e-6), 10 images
    x 5 warps, max per-column relative error < 1e-3."""
    rng = np.random.default_rng(1)
    worst = 0.0
    for img_seed in range(10):
        frame = smooth_frame(img_seed, size=64)
        for _ in range(5):
            lin = rng.normal(0.0, 0.01, size=4)
            trans = rng.normal(0.0, 0.5, size=2)
            warp = WarpParams.affine(1 + lin[0], lin[1], trans[0],
                                     lin[2], 1 + lin[3], trans[1])
            worst = max(worst, jacobian_fd_rel_error(frame, warp))
    report("criterion 1 (jacobian correctness)", worst < 1e-3,
           f"max relative error {worst:.2e} (< 1e-3)")


def test_criterion_2_pairwise_accuracy():
    """20 seeded clean pairs with known affine truth: every recovered warp
    within 0.1 px of the truth."""
    cfg = RegistrationConfig()
    errs = []
    for seed in range(20):
        scene = SceneSpec(width=512, height=512, seed=seed)
        true = seeded_affine(seed, half_translations=True)
        fa, fb = generate_pair(scene, true, frame_shape=(96, 96), supersample=2)
        res = register_pair(build_pyramid(fa, 6), build_pyramid(fb, 6), cfg)
        errs.append(warp_distance(res.warp, true, GRID))
    report("criterion 2 (pairwise accuracy)", max(errs) < 0.1,
           f"max error {max(errs):.4f} px over 20 pairs (< 0.1)")


def test_criterion_3_robustness_ordering_and_gate():
    """50 occluded/contrast-drifted pairs: sin^2 orientation reaches < 1 px on
    >= 70% of pairs and on strictly more pairs than NCC; the gate scores
    recall >= 0.9 on correct registrations and precision >= 0.9 with planted
    non-overlapping (unrelated) pairs as the negative class."""
    n_pairs, n_planted = 50, 20
    sin_errs, verdicts = [], []
    ncc_ok = 0
    for seed in range(n_pairs):
        scene = SceneSpec(width=640, height=640, seed=seed)
        rng = np.random.default_rng([seed, 21])
        true = WarpParams.similarity(np.deg2rad(rng.uniform(-5, 5)),
                                     rng.uniform(0.97, 1.03),
                                     rng.uniform(-5, 5), rng.uniform(-5, 5),
                                     center=(47.5, 47.5))
        fa, fb = generate_pair(scene, true, frame_shape=(96, 96))
        fb = perturb_frame(fb, PerturbationSpec(occlusion_rate=1.0,
                                                occlusion_area=(0.20, 0.40),
                                                contrast_range=(0.6, 1.4),
                                                seed=seed), stream=1)
        pa, pb = build_pyramid(fa, 6), build_pyramid(fb, 6)
        gate_cfg = GateConfig(rng_seed=seed)
        try:
            res = register_pair(pa, pb, RegistrationConfig(), gate_cfg=gate_cfg)
            err = warp_distance(res.warp, true, GRID)
        except MosaicError:
            res, err = None, np.inf
        sin_errs.append(err)
        verdicts.append(("pair", err, gate_registration(res, pa, pb, GRID, gate_cfg)))
        try:
            res_ncc = register_pair(pa, pb, RegistrationConfig(objective=Objective.NCC))
            ncc_ok += warp_distance(res_ncc.warp, true, GRID) < 1.0
        except MosaicError:
            pass

    for seed in range(n_planted):
        rng = np.random.default_rng([seed, 77])
        fa = Frame(0, rng.integers(0, 256, (96, 96, 3), dtype=np.uint8),
                   np.ones((96, 96), dtype=bool))
        fb = Frame(1, rng.integers(0, 256, (96, 96, 3), dtype=np.uint8),
                   np.ones((96, 96), dtype=bool))
        pa, pb = build_pyramid(fa, 6), build_pyramid(fb, 6)
        gate_cfg = GateConfig(rng_seed=1000 + seed)
        try:
            res = register_pair(pa, pb, RegistrationConfig(), gate_cfg=gate_cfg)
        except MosaicError:
            res = None
        verdicts.append(("planted", np.inf,
                         gate_registration(res, pa, pb, GRID, gate_cfg)))

    sin_ok = sum(e < 1.0 for e in sin_errs)
    ordering = sin_ok >= 0.7 * n_pairs and sin_ok > ncc_ok
    correct = [(k, e, v) for k, e, v in verdicts if e < 1.0]
    tp = sum(1 for _, e, v in verdicts if e < 1.0 and v.accepted)
    fp_planted = sum(1 for k, _, v in verdicts if k == "planted" and v.accepted)
    recall = tp / max(len(correct), 1)
    precision = tp / max(tp + fp_planted, 1)
    gate_ok = recall >= 0.9 and precision >= 0.9
    report("criterion 3 (robustness ordering + gate)", ordering and gate_ok,
           f"sin2 {sin_ok}/{n_pairs} vs ncc {ncc_ok}/{n_pairs} under 1 px; "
           f"gate recall {recall:.2f}, precision {precision:.2f} "
           f"({fp_planted}/{n_planted} planted accepted)")


def test_criterion_4_orientation_invariance():
    """Cost and warp unchanged to 1e-6 under I -> aI+b (a>0); sin^2 cost
    unchanged under negation while the cos-correlation cost flips sign."""
    scene = SceneSpec(width=512, height=512, seed=40)
    true = WarpParams.similarity(np.deg2rad(2.0), 1.01, 3.0, -2.0, center=(47.5, 47.5))
    fa, fb = generate_pair(scene, true, frame_shape=(96, 96))
    base_px = (fb.pixels.astype(np.int32) // 3).astype(np.uint8)
    fb_base = Frame(fb.id, base_px, fb.mask.copy())
    fb_mapped = Frame(fb.id, (2 * base_px.astype(np.int32) + 16).astype(np.uint8),
                      fb.mask.copy())
    fb_neg = Frame(fb.id, (255 - fb.pixels).astype(np.uint8), fb.mask.copy())

    cfg = RegistrationConfig()
    pa = build_pyramid(fa, 6)
    pb_base, pb_mapped = build_pyramid(fb_base, 6), build_pyramid(fb_mapped, 6)
    pb, pb_neg = build_pyramid(fb, 6), build_pyramid(fb_neg, 6)

    r_base = register_pair(pa, pb_base, cfg)
    r_mapped = register_pair(pa, pb_mapped, cfg)
    warp_dev = warp_distance(r_base.warp, r_mapped.warp, GRID)
    cost_dev = abs(r_base.final_cost - r_mapped.final_cost)

    r_pos = register_pair(pa, pb, cfg)
    c_pos, _ = orientation_cost(pa.levels[0].gradients, pb.levels[0].gradients,
                                r_pos.warp)
    c_neg, _ = orientation_cost(pa.levels[0].gradients, pb_neg.levels[0].gradients,
                                r_pos.warp)
    corr_pos, _ = correlation_cost(pa.levels[0].gradients, pb.levels[0].gradients,
                                   r_pos.warp)
    corr_neg, _ = correlation_cost(pa.levels[0].gradients, pb_neg.levels[0].gradients,
                                   r_pos.warp)
    sin_invariant = abs(c_pos - c_neg) < 1e-6
    cos_flips = abs(corr_pos + corr_neg) < 1e-6 and corr_pos < -0.5
    passed = warp_dev < 1e-6 and cost_dev < 1e-6 and sin_invariant and cos_flips
    report("criterion 4 (orientation invariance)", passed,
           f"affine map: warp dev {warp_dev:.2e}, cost dev {cost_dev:.2e}; "
           f"negation: sin2 dev {abs(c_pos - c_neg):.2e}, "
           f"cos {corr_pos:.3f} -> {corr_neg:.3f}")


def _star_benchmark(num_frames=100, arms=8, traj_seed=1):
    traj = TrajectorySpec(num_frames=num_frames, pattern=TrajectoryPattern.STAR_SHAPED,
                          max_translation=3.0, max_rotation_deg=1.0, num_arms=arms)
    v_warps, revisits = build_trajectory(traj, (96, 96), np.random.default_rng(traj_seed))
    truth = [invert(v) for v in v_warps]
    closures = [p for p in revisits if p[0] - p[1] >= 10]
    return truth, closures


def test_criterion_5_loop_closure_drift_reduction():
    """100-frame star with 0.5 px per-link noise and noiseless revisit
    closures: bundle beats the sequential chain in >= 19/20 seeds with median
    improvement >= 2x."""
    truth, closures = _star_benchmark()
    assert len(closures) >= 10
    wins, ratios = 0, []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cons = []
        for k in range(1, len(truth)):
            w = compose(truth[k], invert(truth[k - 1]))
            p = list(w.p)
            p[2] += rng.normal(0.0, 0.5)
            p[5] += rng.normal(0.0, 0.5)
            cons.append(Constraint(k, k - 1, WarpParams(tuple(p))))
        for i, j in closures:
            cons.append(Constraint(i, j, compose(truth[i], invert(truth[j]))))
        seq, _ = sequential_chain(cons, len(truth))
        err_seq = ground_truth_error(seq, truth, GRID).max()
        graph = bundle_adjust(PoseGraph(num_frames=len(truth), constraints=cons,
                                        globals_=list(seq)), GRID)
        err_ba = ground_truth_error(graph.globals_, truth, GRID).max()
        wins += err_ba < err_seq
        ratios.append(err_seq / err_ba)
    median = float(np.median(ratios))
    report("criterion 5 (loop-closure drift reduction)",
           wins >= 19 and median >= 2.0,
           f"bundle wins {wins}/20 seeds, median improvement {median:.2f}x "
           f"({len(closures)} closures)")


def test_criterion_6_bundle_exactness():
    """Noiseless chain + closures admit an exact solution: from identity
    initialization the solver reaches cost < 1e-8 and per-frame error < 1e-6."""
    truth, closures = _star_benchmark()
    cons = [Constraint(k, k - 1, compose(truth[k], invert(truth[k - 1])))
            for k in range(1, len(truth))]
    cons += [Constraint(i, j, compose(truth[i], invert(truth[j])))
             for i, j in closures]
    graph = bundle_adjust(PoseGraph(num_frames=len(truth), constraints=cons), GRID)
    err = ground_truth_error(graph.globals_, truth, GRID).max()
    report("criterion 6 (bundle exactness)",
           graph.final_cost < 1e-8 and err < 1e-6,
           f"final cost {graph.final_cost:.2e} (< 1e-8), "
           f"max frame error {err:.2e} px (< 1e-6)")


def test_criterion_7_retrieval_pattern():
    """Scheduled star revisits score >= 0.2 above the off-pair mean; the
    similarity matrix is symmetric with unit diagonal."""
    scene = SceneSpec(width=640, height=640, seed=11)
    traj = TrajectorySpec(num_frames=60, pattern=TrajectoryPattern.STAR_SHAPED,
                          max_translation=3.0, max_rotation_deg=0.5, num_arms=4)
    frames, _ = generate_sequence(scene, traj,
                                  PerturbationSpec(noise_sigma=0.01, seed=5),
                                  frame_shape=(96, 96))
    descs = [extract_descriptors(to_grayscale(f), f.mask, 16) for f in frames]
    vocab = build_vocabulary([d for ds in descs for d in ds], 50, seed=3)
    sigs = [compute_signature(d, vocab) for d in descs]
    sim = build_similarity_matrix(sigs)

    n = len(frames)
    symmetric = np.array_equal(sim.s, sim.s.T)
    unit_diag = np.allclose(np.diag(sim.s), 1.0)
    revisits = [p for p in traj.revisit_schedule if p[0] - p[1] >= 10]
    revisit_mean = float(np.mean([sim.s[i, j] for i, j in revisits]))
    off = ~np.eye(n, dtype=bool)
    for d in range(1, 10):
        off &= ~np.eye(n, k=d, dtype=bool) & ~np.eye(n, k=-d, dtype=bool)
    for i, j in revisits:
        off[i, j] = off[j, i] = False
    off_mean = float(sim.s[off].mean())
    passed = symmetric and unit_diag and revisit_mean >= off_mean + 0.2
    report("criterion 7 (retrieval pattern)", passed,
           f"revisit mean {revisit_mean:.3f} vs off-pair mean {off_mean:.3f} "
           f"(margin {revisit_mean - off_mean:.3f} >= 0.2), "
           f"symmetric={symmetric}, unit diagonal={unit_diag}")


def test_criterion_8_pipeline_determinism(tmp_path):
    """Two pipeline runs with an identical config produce byte-identical JSON
    outputs (stage timings excluded by contract)."""
    scene = SceneSpec(width=512, height=512, seed=8)
    traj = TrajectorySpec(num_frames=8, pattern=TrajectoryPattern.LINE,
                          max_translation=3.0)
    frames, _ = generate_sequence(scene, traj, frame_shape=(96, 96))
    cfg = PipelineConfig()
    cfg.output_dir = str(tmp_path / "run")
    run_pipeline(cfg, frames=frames)
    out = Path(cfg.output_dir)
    first = {name: (out / name).read_bytes()
             for name in ("pairs.json", "posegraph.json", "similarity.csv")}
    first_report = json.loads((out / "report.json").read_text())
    run_pipeline(cfg, frames=frames)
    same = all((out / name).read_bytes() == blob for name, blob in first.items())
    second_report = json.loads((out / "report.json").read_text())
    first_report.pop("timings_sec")
    second_report.pop("timings_sec")
    passed = same and first_report == second_report
    report("criterion 8 (pipeline determinism)", passed,
           "pairs.json, posegraph.json, similarity.csv byte-identical; "
           "report.json identical up to timings")


def test_criterion_9_warp_algebra_properties():
    """Group laws, distance metric properties and affine closure over 1000
    random instances."""
    from test_geometry import random_affine, random_homography
    rng = np.random.default_rng(99)
    grid = RefGrid(60, 60, 6)
    pts = grid.points()
    from videomosaic.geometry import apply_warp_array
    failures = 0
    for trial in range(1000):
        a = random_homography(rng) if trial % 4 == 0 else random_affine(rng)
        b = random_affine(rng)
        c = random_affine(rng)
        assoc = np.max(np.abs(
            apply_warp_array(compose(compose(a, b), c), pts)
            - apply_warp_array(compose(a, compose(b, c)), pts)))
        ident = np.max(np.abs(apply_warp_array(compose(a, invert(a)), pts) - pts))
        ident2 = np.max(np.abs(apply_warp_array(compose(invert(a), a), pts) - pts))
        neutral = compose(a, WarpParams.identity()).p == a.p
        dab = warp_distance(a, b, grid)
        sym = abs(dab - warp_distance(b, a, grid)) < 1e-12
        tri = dab <= warp_distance(a, c, grid) + warp_distance(c, b, grid) + 1e-9
        closure = True
        if a.is_affine():
            comp = compose(a, b)
            closure = comp.kind.value == "affine" and comp.p[6] == 0.0 and comp.p[7] == 0.0
        if not (assoc < 1e-9 and ident < 1e-9 and ident2 < 1e-9 and neutral
                and sym and tri and closure):
            failures += 1
    report("criterion 9 (warp algebra suite)", failures == 0,
           f"{1000 - failures}/1000 random instances satisfy all properties")
