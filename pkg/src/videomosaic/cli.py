"""Command-line interface.

Subcommands expose every pipeline stage for inspection:

    synth          render a synthetic sequence with ground truth
    register-pair  register two PNG frames, print/write the result JSON
    similarity     similarity matrix of a frame directory (CSV + heatmap PNG)
    pipeline       full mosaicking run
    config-init    write a config file populated with all defaults
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import MosaicError
from .frameio import load_frame, load_frames_dir, load_mask, frame_mask, save_frame_png
from .geometry import RefGrid
from .imageproc import build_pyramid
from .pipeline import compute_similarity, register_and_gate, run_pipeline
from .report import save_similarity_csv, save_similarity_heatmap
from .retrieval import select_pairs
from .synth import (
    PerturbationSpec,
    SceneSpec,
    TrajectoryPattern,
    TrajectorySpec,
    generate_sequence,
)

log = logging.getLogger(__name__)


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _fail(stage: str, exc: Exception) -> int:
    record = {"error": {"stage": stage, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return 1


def cmd_config_init(args) -> int:
    PipelineConfig().save(args.out)
    print(f"wrote default config to {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = json.loads(Path(args.spec).read_text()) if args.spec else {}
    scene = SceneSpec(**spec.get("scene", {}))
    traj_spec = dict(spec.get("trajectory", {}))
    if args.frames is not None:
        traj_spec["num_frames"] = args.frames
    if args.pattern is not None:
        traj_spec["pattern"] = args.pattern
    traj_spec.setdefault("num_frames", 50)
    if "pattern" in traj_spec:
        traj_spec["pattern"] = TrajectoryPattern(traj_spec["pattern"])
    traj = TrajectorySpec(**traj_spec)
    pert_spec = dict(spec.get("perturbation", {}))
    if "contrast_range" in pert_spec and pert_spec["contrast_range"] is not None:
        pert_spec["contrast_range"] = tuple(pert_spec["contrast_range"])
    if "occlusion_area" in pert_spec:
        pert_spec["occlusion_area"] = tuple(pert_spec["occlusion_area"])
    perturb = PerturbationSpec(**pert_spec)
    if args.seed is not None:
        scene.seed = args.seed
        perturb.seed = args.seed
    frame_shape = tuple(spec.get("frame_shape", (96, 96)))

    try:
        frames, truth = generate_sequence(
            scene, traj, perturb, frame_shape=frame_shape,
            circular_fov=spec.get("circular_fov", True),
            supersample=spec.get("supersample", 1))
    except MosaicError as exc:
        return _fail("synth", exc)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        save_frame_png(frame, out_dir / f"frame_{frame.id:05d}.png")
    truth_json = {
        "num_frames": len(frames),
        "frames": [{"index": k, "warp": wp.to_json()} for k, wp in enumerate(truth)],
        "revisits": [list(p) for p in (traj.revisit_schedule or [])],
    }
    (out_dir / "truth.json").write_text(json.dumps(truth_json, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(frames)} frames and truth.json to {out_dir}")
    return 0


def cmd_register_pair(args) -> int:
    cfg = _load_config(args)
    try:
        mask_a = load_mask(args.mask_a) if args.mask_a else None
        mask_b = load_mask(args.mask_b) if args.mask_b else None
        frame_a = load_frame(args.frame_a, args.index_a, mask_a)
        frame_b = load_frame(args.frame_b, args.index_b, mask_b)
        if mask_a is None and cfg.mask.kind != "full":
            frame_a.mask = frame_mask(frame_a.shape, cfg.mask.kind,
                                      cfg.mask.center, cfg.mask.radius)
            frame_b.mask = frame_mask(frame_b.shape, cfg.mask.kind,
                                      cfg.mask.center, cfg.mask.radius)
        pyr_a = build_pyramid(frame_a, cfg.registration.num_levels, cfg.registration.grad_eps)
        pyr_b = build_pyramid(frame_b, cfg.registration.num_levels, cfg.registration.grad_eps)
        h, w = frame_a.shape
        grid = RefGrid(w, h, cfg.grid_step)
        result, error, verdict = register_and_gate(pyr_a, pyr_b, cfg,
                                                   args.index_a, args.index_b, grid)
    except MosaicError as exc:
        return _fail("register_pair", exc)

    record = {
        "fixed": args.index_a, "moving": args.index_b,
        "registration": result.to_json() if result else None,
        "error": error,
        "gate": verdict.to_json(),
    }
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if error is None else 1


def cmd_similarity(args) -> int:
    cfg = _load_config(args)
    if args.frames_dir:
        cfg.frames_dir = args.frames_dir
    if args.out_dir:
        cfg.output_dir = args.out_dir
    try:
        frames = load_frames_dir(cfg.frames_dir, cfg.mask.kind, cfg.mask.mask_dir,
                                 cfg.mask.center, cfg.mask.radius)
        sim, _ = compute_similarity(frames, cfg)
    except (MosaicError, FileNotFoundError, ValueError) as exc:
        return _fail("similarity", exc)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_similarity_csv(sim, out_dir / "similarity.csv")
    save_similarity_heatmap(sim, out_dir / "similarity.png")
    budget = cfg.retrieval.budget if cfg.retrieval.budget is not None else 3 * len(frames)
    pairs = select_pairs(sim, cfg.retrieval.threshold, budget, cfg.retrieval.min_gap)
    print(f"similarity matrix for {len(frames)} frames -> {out_dir}; "
          f"{len(pairs)} candidate pairs above threshold")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    if args.frames_dir:
        cfg.frames_dir = args.frames_dir
    if args.out_dir:
        cfg.output_dir = args.out_dir
    try:
        report = run_pipeline(cfg)
    except MosaicError as exc:
        return _fail("pipeline", exc)
    except FileNotFoundError as exc:
        return _fail("load", exc)
    print(f"pipeline done: {report['pairs_accepted']}/{report['pairs_attempted']} "
          f"pairs accepted, bundle cost {report['bundle']['final_cost']:.3e}, "
          f"outputs in {cfg.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videomosaic",
                                     description="Video mosaicking pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config-init", help="write a full-default config file")
    p.add_argument("--out", default="mosaic-config.json")
    p.set_defaults(func=cmd_config_init)

    p = sub.add_parser("synth", help="generate a synthetic sequence with ground truth")
    p.add_argument("--spec", help="JSON spec (scene/trajectory/perturbation)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, help="override number of frames")
    p.add_argument("--pattern", choices=[m.value for m in TrajectoryPattern])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register-pair", help="register two PNG frames")
    p.add_argument("frame_a")
    p.add_argument("frame_b")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--index-a", type=int, default=0, help="frame index of frame_a")
    p.add_argument("--index-b", type=int, default=1, help="frame index of frame_b")
    p.add_argument("--mask-a", help="mask PNG for frame_a (nonzero = valid)")
    p.add_argument("--mask-b", help="mask PNG for frame_b")
    p.add_argument("--out", help="write result JSON here instead of stdout")
    p.set_defaults(func=cmd_register_pair)

    p = sub.add_parser("similarity", help="similarity matrix of a frame directory")
    p.add_argument("--frames-dir")
    p.add_argument("--out-dir")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("pipeline", help="run the full mosaicking pipeline")
    p.add_argument("--config")
    p.add_argument("--frames-dir")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
