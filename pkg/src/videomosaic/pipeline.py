"""End-to-end mosaicking pipeline.

Stages: consecutive-pair registrations, bag-of-words retrieval, retrieved-pair
registrations, gating, sequential-chain initialization, bundle adjustment,
compositing, reporting. Every attempted registration is recorded; only gated
constraints reach the global solve. All randomness derives from the single
config seed keyed by stage and frame indices, so results do not depend on
worker count or scheduling order.
"""

from __future__ import annotations

import json
import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bundle import Constraint, PoseGraph, bundle_adjust, sequential_chain
from .compositor import BlendMode, composite
from .config import PipelineConfig
from .errors import MosaicError
from .frameio import load_frames_dir, save_rgba_png
from .gate import GateVerdict, gate_registration
from .geometry import RefGrid
from .imageproc import Frame, Pyramid, build_pyramid, to_grayscale
from .register import RegistrationResult, register_pair
from .report import (
    save_pairs_csv,
    save_residual_figure,
    save_similarity_csv,
    save_similarity_heatmap,
    save_trajectory_figure,
)
from .retrieval import (
    SimilarityMatrix,
    Signature,
    build_similarity_matrix,
    build_vocabulary,
    compute_signature,
    extract_descriptors,
    select_pairs,
)

log = logging.getLogger(__name__)


def derived_seed(seed: int, *parts) -> int:
    """Stable stream seed for a pipeline stage or pair."""
    return zlib.crc32("/".join([str(seed), *map(str, parts)]).encode())


@dataclass
class PairRecord:
    i: int                 # constraint endpoint: moving frame
    j: int                 # constraint endpoint: fixed frame
    kind: str              # consecutive | retrieved
    similarity: float | None
    registration: RegistrationResult | None
    error: str | None
    verdict: GateVerdict

    def to_json(self) -> dict:
        return {
            "i": self.i, "j": self.j, "kind": self.kind,
            "similarity": self.similarity,
            "fixed": self.j, "moving": self.i,
            "registration": self.registration.to_json() if self.registration else None,
            "error": self.error,
            "gate": self.verdict.to_json(),
        }


def register_and_gate(fixed_pyr: Pyramid, moving_pyr: Pyramid, cfg: PipelineConfig,
                      fixed_idx: int, moving_idx: int, grid: RefGrid
                      ) -> tuple[RegistrationResult | None, str | None, GateVerdict]:
    """One attempted registration plus its gate verdict (shared by CLI and pipeline)."""
    pair_gate = replace(cfg.gate,
                        rng_seed=derived_seed(cfg.seed, "gate", fixed_idx, moving_idx))
    try:
        result = register_pair(fixed_pyr, moving_pyr, cfg.registration,
                               gate_cfg=pair_gate, seed_key=())
    except MosaicError as exc:
        verdict = gate_registration(None, fixed_pyr, moving_pyr, grid, pair_gate)
        return None, f"{type(exc).__name__}: {exc}", verdict
    verdict = gate_registration(result, fixed_pyr, moving_pyr, grid, pair_gate)
    return result, None, verdict


def compute_similarity(frames: list[Frame], cfg: PipelineConfig
                       ) -> tuple[SimilarityMatrix, list[int]]:
    """Similarity matrix of all frames, plus per-frame descriptor counts.

    The vocabulary size is clamped to the available descriptor count; with
    fewer than two descriptors in the whole sequence the matrix degenerates
    to the identity-on-nonempty-frames case.
    """
    descs = [extract_descriptors(to_grayscale(f), f.mask, cfg.retrieval.keypoint_step)
             for f in frames]
    counts = [len(d) for d in descs]
    total = sum(counts)
    all_vectors = np.vstack([d.vector for ds in descs for d in ds]) if total else \
        np.zeros((0, 1))
    n_unique = np.unique(all_vectors, axis=0).shape[0]
    k = min(cfg.retrieval.vocab_size, n_unique)
    if k < 2:
        log.warning("too few descriptors (%d) for retrieval; similarity is degenerate", total)
        sigs = [Signature(counts=np.zeros(1, dtype=np.int64)) for _ in frames]
    else:
        if k < cfg.retrieval.vocab_size:
            log.warning("vocabulary clamped to %d words (%d descriptors)", k, total)
        vocab = build_vocabulary([d for ds in descs for d in ds], k,
                                 seed=derived_seed(cfg.seed, "vocab"))
        sigs = [compute_signature(d, vocab) for d in descs]
    return build_similarity_matrix(sigs), counts


def run_pipeline(cfg: PipelineConfig, frames: list[Frame] | None = None) -> dict:
    """Run all stages, write every artifact into cfg.output_dir, return the report."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    if frames is None:
        frames = load_frames_dir(cfg.frames_dir, cfg.mask.kind, cfg.mask.mask_dir,
                                 cfg.mask.center, cfg.mask.radius)
    if len(frames) < 2:
        raise MosaicError("pipeline needs at least 2 frames")
    h, w = frames[0].shape
    grid = RefGrid(w, h, cfg.grid_step)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pyramids = [build_pyramid(f, cfg.registration.num_levels, cfg.registration.grad_eps)
                for f in frames]
    timings["pyramids"] = time.perf_counter() - t0

    # retrieval first so similarity values annotate every pair record
    t0 = time.perf_counter()
    sim, desc_counts = compute_similarity(frames, cfg)
    budget = cfg.retrieval.budget
    if budget is None:
        budget = 3 * len(frames)
    retrieved = select_pairs(sim, cfg.retrieval.threshold, budget, cfg.retrieval.min_gap)
    save_similarity_csv(sim, out_dir / "similarity.csv")
    save_similarity_heatmap(sim, out_dir / "similarity.png")
    timings["retrieval"] = time.perf_counter() - t0

    tasks = [(k - 1, k, "consecutive") for k in range(1, len(frames))]
    tasks += [(a, b, "retrieved") for a, b in retrieved]

    def _run(task):
        fixed_idx, moving_idx, kind = task
        result, error, verdict = register_and_gate(
            pyramids[fixed_idx], pyramids[moving_idx], cfg, fixed_idx, moving_idx, grid)
        similarity = float(sim.s[fixed_idx, moving_idx])
        return PairRecord(i=moving_idx, j=fixed_idx, kind=kind, similarity=similarity,
                          registration=result, error=error, verdict=verdict)

    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run, tasks))
    else:
        records = [_run(t) for t in tasks]
    timings["register_and_gate"] = time.perf_counter() - t0

    constraints = [
        Constraint(i=r.i, j=r.j, warp=r.registration.warp,
                   accepted=r.verdict.accepted, gate_reason=r.verdict.reason.value)
        for r in records if r.registration is not None
    ]

    t0 = time.perf_counter()
    seq_globals, bridged = sequential_chain(constraints, len(frames))
    graph = PoseGraph(num_frames=len(frames), constraints=constraints,
                      globals_=list(seq_globals), bridged=bridged)
    graph = bundle_adjust(graph, grid, cfg.bundle)
    timings["bundle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    skip = [graph.excluded[k] or graph.bridged[k] for k in range(len(frames))]
    mode = BlendMode(cfg.compositor.mode)
    mosaic = composite(frames, graph.globals_, mode, cfg.compositor.stride, skip)
    save_rgba_png(mosaic.to_rgba(), out_dir / "mosaic.png")
    timings["composite"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _write_json(out_dir / "pairs.json", {"pairs": [r.to_json() for r in records]})
    _write_json(out_dir / "posegraph.json", graph.to_json())
    dist_by_idx = dict(zip(range(len(graph.constraints)), graph.constraint_distances or []))
    cons_pos = {(c.i, c.j): idx for idx, c in enumerate(graph.constraints)}
    pair_rows = []
    for r in records:
        row = {"i": r.i, "j": r.j, "kind": r.kind, "similarity": r.similarity,
               "final_cost": r.registration.final_cost if r.registration else "",
               "accepted": r.verdict.accepted, "gate_reason": r.verdict.reason.value,
               "distance_after": dist_by_idx.get(cons_pos.get((r.i, r.j), -1), "")}
        pair_rows.append(row)
    save_pairs_csv(pair_rows, out_dir / "pairs.csv")
    save_trajectory_figure(seq_globals, graph.globals_, (h, w),
                           out_dir / "trajectory.png", skip=graph.excluded)
    save_residual_figure(graph.constraint_distances or [],
                         [c.accepted for c in graph.constraints],
                         out_dir / "residuals.png")
    timings["report"] = time.perf_counter() - t0

    reasons: dict[str, int] = {}
    for r in records:
        if not r.verdict.accepted:
            reasons[r.verdict.reason.value] = reasons.get(r.verdict.reason.value, 0) + 1
    report = {
        "num_frames": len(frames),
        "frame_shape": [h, w],
        "descriptors_per_frame": desc_counts,
        "pairs_attempted": len(records),
        "pairs_accepted": sum(1 for r in records if r.verdict.accepted),
        "pairs_rejected": sum(1 for r in records if not r.verdict.accepted),
        "rejection_reasons": reasons,
        "retrieved_pairs": len(retrieved),
        "frames_bridged": int(sum(graph.bridged)),
        "frames_excluded": int(sum(graph.excluded)),
        "bundle": {"final_cost": graph.final_cost,
                   "constraints": len(graph.constraints)},
        "mosaic_extent": list(mosaic.extent),
        "outputs": {name: str(out_dir / name) for name in
                    ("pairs.json", "posegraph.json", "mosaic.png", "report.json",
                     "similarity.csv", "similarity.png", "pairs.csv",
                     "trajectory.png", "residuals.png")},
        "timings_sec": {k: round(v, 4) for k, v in timings.items()},
    }
    _write_json(out_dir / "report.json", report)
    return report


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
