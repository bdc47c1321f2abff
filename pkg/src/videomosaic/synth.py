"""Synthetic scene, trajectory and sequence generation with exact ground truth.

A procedural canvas (smooth noise plus dark vessel-like strokes) stands in
for the planar scene; frames sample the canvas with a cubic spline under
known global warps, optionally degraded with occlusion blobs, per-frame
contrast changes and additive noise. Everything is deterministic given the
seeds, so generated sequences double as oracles for registration, retrieval
and bundle adjustment.

Conventions: a frame's global warp W maps absolute (mosaic) coordinates to
that frame's local pixel coordinates, with frame 0 as the identity reference.
The generator works with the inverse warps V = W^-1 (local to absolute) and
returns the W list as ground truth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import LengthMismatch, TrajectoryLeavesCanvas
from .geometry import RefGrid, WarpParams, apply_warp_array, invert, warp_distance
from .imageproc import Frame, circular_mask


@dataclass
class SceneSpec:
    """Procedural canvas: smooth noise background with dark curvilinear strokes."""

    width: int = 512
    height: int = 512
    seed: int = 0
    num_vessels: int | None = None  # None: scaled to canvas area
    vessel_width_range: tuple[float, float] = (3.0, 8.0)


class TrajectoryPattern(str, enum.Enum):
    LINE = "line"
    STAR_SHAPED = "star_shaped"
    LOOP = "loop"


@dataclass
class TrajectorySpec:
    num_frames: int
    pattern: TrajectoryPattern = TrajectoryPattern.LINE
    max_translation: float = 2.0     # px per frame along the path
    max_rotation_deg: float = 0.0    # per-frame random heading change bound
    num_arms: int = 4                # star pattern only
    revisit_schedule: list[tuple[int, int]] | None = None  # filled by generation
    canvas_offset: tuple[float, float] | None = None       # filled by generation

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.max_translation <= 0:
            raise ValueError("max_translation must be positive")


@dataclass
class PerturbationSpec:
    occlusion_rate: float = 0.0
    occlusion_area: tuple[float, float] = (0.10, 0.40)  # fraction of frame area
    contrast_range: tuple[float, float] | None = None   # multiplicative a, e.g. (0.6, 1.4)
    contrast_offset: float = 0.1                        # additive b drawn in [-b, b]
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError("occlusion_rate must be in [0, 1]")


def build_canvas(scene: SceneSpec) -> np.ndarray:
    """(H, W, 3) float RGB canvas in [0, 1]."""
    h, w = scene.height, scene.width
    rng = np.random.default_rng([scene.seed, 101])
    low = ndimage.gaussian_filter(rng.normal(size=(h, w)), 12.0)
    mid = ndimage.gaussian_filter(rng.normal(size=(h, w)), 2.5)
    low = (low - low.mean()) / (low.std() + 1e-12)
    mid = (mid - mid.mean()) / (mid.std() + 1e-12)
    # amplitudes sized so texture gradients stay well above 8-bit quantization
    gray = 0.56 + 0.16 * low + 0.065 * mid

    n_vessels = scene.num_vessels
    if n_vessels is None:
        n_vessels = max(6, (h * w) // 16000)
    depth = np.zeros((h, w))
    for _ in range(n_vessels):
        _draw_vessel(depth, rng, scene.vessel_width_range)
    gray = np.clip(gray - depth, 0.04, 0.96)

    canvas = np.empty((h, w, 3))
    canvas[..., 0] = np.clip(0.16 + 0.80 * gray, 0.0, 1.0)
    canvas[..., 1] = np.clip(0.05 + 0.72 * gray, 0.0, 1.0)
    canvas[..., 2] = np.clip(0.04 + 0.58 * gray, 0.0, 1.0)
    return canvas


def _draw_vessel(depth: np.ndarray, rng: np.random.Generator,
                 width_range: tuple[float, float]) -> None:
    """Accumulate one smooth dark stroke into the depth map (max-composited)."""
    h, w = depth.shape
    margin = 10
    x = rng.uniform(margin, w - margin)
    y = rng.uniform(margin, h - margin)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    length = rng.uniform(0.3, 0.9) * min(h, w)
    stroke_w = rng.uniform(*width_range)
    strength = rng.uniform(0.22, 0.40)
    sigma = stroke_w / 2.5
    radius = int(math.ceil(2.5 * sigma))
    steps = int(length / 1.5)
    for _ in range(steps):
        x += 1.5 * math.cos(heading)
        y += 1.5 * math.sin(heading)
        heading += rng.normal(0.0, 0.08)
        xi, yi = int(round(x)), int(round(y))
        if not (radius <= xi < w - radius and radius <= yi < h - radius):
            break
        yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
        bump = strength * np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
        region = depth[yi - radius:yi + radius + 1, xi - radius:xi + radius + 1]
        np.maximum(region, bump, out=region)


# ---------------------------------------------------------------------------
# trajectories


def _pose_warp(tx: float, ty: float, psi: float, center: tuple[float, float]) -> WarpParams:
    """Local-to-absolute warp: rotate by psi about the frame center, then translate."""
    return WarpParams.similarity(psi, 1.0, tx, ty, center=center)


def build_trajectory(traj: TrajectorySpec, frame_shape: tuple[int, int],
                     rng: np.random.Generator
                     ) -> tuple[list[WarpParams], list[tuple[int, int]]]:
    """Local-to-absolute warps V_i for every frame plus the revisit schedule.

    V_0 is the identity. Revisit pairs (i, j), j < i, mark frames generated
    at exactly the same pose (star arms retrace their outbound path; loops
    close on their start).
    """
    h, w = frame_shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    n = traj.num_frames
    v = traj.max_translation
    rot = math.radians(traj.max_rotation_deg)

    poses: list[tuple[float, float, float]] = [(0.0, 0.0, 0.0)]
    revisits: list[tuple[int, int]] = []

    if traj.pattern == TrajectoryPattern.LINE:
        psi = 0.0
        for i in range(1, n):
            psi += rng.uniform(-rot, rot)
            poses.append((i * v, 0.0, psi))

    elif traj.pattern == TrajectoryPattern.STAR_SHAPED:
        arm_len = max(2, (n - 1) // (2 * traj.num_arms))
        seen: dict[tuple[int, int, int], int] = {_pose_key(poses[0]): 0}
        arm = 0
        while len(poses) < n:
            angle = 2.0 * math.pi * arm / traj.num_arms
            dx, dy = math.cos(angle), math.sin(angle)
            out_poses = []
            psi = 0.0
            for k in range(1, arm_len + 1):
                psi += rng.uniform(-rot, rot)
                out_poses.append((k * v * dx, k * v * dy, psi))
            # outbound then exact retrace back to the center
            path = out_poses + out_poses[-2::-1] + [(0.0, 0.0, 0.0)]
            for pose in path:
                if len(poses) >= n:
                    break
                idx = len(poses)
                poses.append(pose)
                key = _pose_key(pose)
                if key in seen:
                    revisits.append((idx, seen[key]))
                else:
                    seen[key] = idx
            arm += 1

    elif traj.pattern == TrajectoryPattern.LOOP:
        radius = n * v / (2.0 * math.pi)
        for i in range(1, n):
            theta = 2.0 * math.pi * i / n
            poses.append((radius * math.sin(theta), radius * (1.0 - math.cos(theta)), 0.0))
        for i in range(n):
            for j in range(i - n // 2, -1, -1):
                if math.hypot(poses[i][0] - poses[j][0],
                              poses[i][1] - poses[j][1]) <= 1.5 * v:
                    revisits.append((i, j))

    else:
        raise ValueError(f"unknown trajectory pattern {traj.pattern}")

    warps = [_pose_warp(tx, ty, psi, center) for tx, ty, psi in poses]
    return warps, revisits


def _pose_key(pose: tuple[float, float, float]) -> tuple[int, int, int]:
    return (round(pose[0] * 64), round(pose[1] * 64), round(pose[2] * 4096))


# ---------------------------------------------------------------------------
# sequence generation


def _spline_canvas(canvas: np.ndarray) -> np.ndarray:
    """Per-channel cubic spline coefficients for high-fidelity sampling."""
    return np.stack([ndimage.spline_filter(canvas[..., c], order=3)
                     for c in range(canvas.shape[2])], axis=-1)


def _sample_canvas(coeffs: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                   out_shape: tuple[int, int]) -> np.ndarray:
    h, w = coeffs.shape[:2]
    if xs.min() < 0.0 or ys.min() < 0.0 or xs.max() > w - 1.0 or ys.max() > h - 1.0:
        raise TrajectoryLeavesCanvas("sample coordinates outside the canvas")
    out = np.empty((*out_shape, 3))
    for c in range(3):
        out[..., c] = ndimage.map_coordinates(
            coeffs[..., c], [ys, xs], order=3, prefilter=False,
            mode="nearest").reshape(out_shape)
    return np.clip(out, 0.0, 1.0)


def _render_frame(coeffs: np.ndarray, v_warp: WarpParams, offset: np.ndarray,
                  frame_shape: tuple[int, int], supersample: int = 1) -> np.ndarray:
    h, w = frame_shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if supersample <= 1:
        pts = apply_warp_array(v_warp, np.column_stack([xx.ravel(), yy.ravel()]))
        return _sample_canvas(coeffs, pts[:, 0] + offset[0], pts[:, 1] + offset[1], frame_shape)
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((h, w, 3))
    for dy in sub:
        for dx in sub:
            pts = apply_warp_array(v_warp, np.column_stack([(xx + dx).ravel(),
                                                            (yy + dy).ravel()]))
            acc += _sample_canvas(coeffs, pts[:, 0] + offset[0], pts[:, 1] + offset[1],
                                  frame_shape)
    return acc / (supersample * supersample)


def _perturb_frame(rgb: np.ndarray, perturb: PerturbationSpec,
                   rng: np.random.Generator) -> np.ndarray:
    h, w = rgb.shape[:2]
    out = rgb
    if perturb.contrast_range is not None:
        a = rng.uniform(*perturb.contrast_range)
        b = rng.uniform(-perturb.contrast_offset, perturb.contrast_offset)
        out = a * out + b
    if perturb.occlusion_rate > 0.0 and rng.uniform() < perturb.occlusion_rate:
        out = _inject_occlusion(out.copy(), perturb.occlusion_area, rng)
    if perturb.noise_sigma > 0.0:
        out = out + rng.normal(0.0, perturb.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _inject_occlusion(rgb: np.ndarray, area_range: tuple[float, float],
                      rng: np.random.Generator) -> np.ndarray:
    """Paint a soft-edged opaque ellipse covering the requested area fraction."""
    h, w = rgb.shape[:2]
    frac = rng.uniform(*area_range)
    ratio = rng.uniform(0.5, 1.0)
    # area = pi * ax * ay with ay = ratio * ax
    ax = math.sqrt(frac * h * w / (math.pi * ratio))
    ay = ratio * ax
    cx = rng.uniform(0.25 * w, 0.75 * w)
    cy = rng.uniform(0.25 * h, 0.75 * h)
    angle = rng.uniform(0.0, math.pi)
    color = np.array([rng.uniform(0.10, 0.30), rng.uniform(0.05, 0.15),
                      rng.uniform(0.05, 0.15)])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    ca, sa = math.cos(angle), math.sin(angle)
    u = (dx * ca + dy * sa) / ax
    vv = (-dx * sa + dy * ca) / ay
    rho = np.sqrt(u * u + vv * vv)
    alpha = np.clip((1.0 - rho) / 0.08, 0.0, 1.0)[..., None]
    return (1.0 - alpha) * rgb + alpha * color


def generate_sequence(scene: SceneSpec, traj: TrajectorySpec,
                      perturb: PerturbationSpec | None = None,
                      frame_shape: tuple[int, int] = (96, 96),
                      circular_fov: bool = True,
                      supersample: int = 1) -> tuple[list[Frame], list[WarpParams]]:
    """Render the sequence and return (frames, ground-truth global warps).

    truth[i] maps absolute coordinates into frame i; truth[0] is the
    identity. ``traj.revisit_schedule`` is populated in place when unset.
    Raises :class:`TrajectoryLeavesCanvas` if any footprint leaves the canvas.
    """
    h, w = frame_shape
    if scene.height < 4 * h or scene.width < 4 * w:
        raise ValueError("canvas must be at least 4x the frame size per dimension")
    perturb = perturb or PerturbationSpec()
    coeffs = _spline_canvas(build_canvas(scene))
    rng_traj = np.random.default_rng([scene.seed, 202])
    v_warps, revisits = build_trajectory(traj, frame_shape, rng_traj)
    if traj.revisit_schedule is None:
        traj.revisit_schedule = revisits

    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]])
    warped = np.vstack([apply_warp_array(vw, corners) for vw in v_warps])
    lo, hi = warped.min(axis=0), warped.max(axis=0)
    canvas_size = np.array([scene.width - 1.0, scene.height - 1.0])
    if np.any(hi - lo > canvas_size - 4.0):
        raise TrajectoryLeavesCanvas(
            f"trajectory footprint {hi - lo} exceeds canvas {canvas_size}")
    # whole-pixel centering keeps the reference frame aligned with the canvas raster
    offset = np.round((canvas_size - (hi + lo)) / 2.0)
    traj.canvas_offset = (float(offset[0]), float(offset[1]))

    mask = circular_mask(h, w) if circular_fov else np.ones((h, w), dtype=bool)
    frames: list[Frame] = []
    truth: list[WarpParams] = []
    for i, vw in enumerate(v_warps):
        rgb = _render_frame(coeffs, vw, offset, frame_shape, supersample)
        rgb = _perturb_frame(rgb, perturb, np.random.default_rng([perturb.seed, 303, i]))
        rgb[~mask] = 0.0
        frames.append(Frame(id=i, pixels=np.round(rgb * 255.0).astype(np.uint8),
                            mask=mask.copy()))
        truth.append(invert(vw))
    return frames, truth


def perturb_frame(frame: Frame, perturb: PerturbationSpec, stream: int = 0) -> Frame:
    """Degrade one frame (occlusion / contrast / noise) deterministically."""
    rng = np.random.default_rng([perturb.seed, 505, stream])
    rgb = frame.pixels.astype(np.float64) / 255.0
    rgb = _perturb_frame(rgb, perturb, rng)
    rgb[~frame.mask] = 0.0
    return Frame(id=frame.id, pixels=np.round(rgb * 255.0).astype(np.uint8),
                 mask=frame.mask.copy())


def generate_pair(scene: SceneSpec, warp: WarpParams,
                  frame_shape: tuple[int, int] = (96, 96),
                  perturb: PerturbationSpec | None = None,
                  extra_offset_b: tuple[float, float] = (0.0, 0.0),
                  circular_fov: bool = True,
                  supersample: int = 1) -> tuple[Frame, Frame]:
    """Two frames related by a known warp (fixed-domain a into moving-domain b).

    Registering (fixed=a, moving=b) should recover ``warp``. A nonzero
    ``extra_offset_b`` shifts b's footprint on the canvas, producing planted
    non-overlapping pairs for gate benchmarks.
    """
    h, w = frame_shape
    coeffs = _spline_canvas(build_canvas(scene))
    v_b = invert(warp)
    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]])
    warped = np.vstack([corners, apply_warp_array(v_b, corners)
                        + np.asarray(extra_offset_b)])
    lo, hi = warped.min(axis=0), warped.max(axis=0)
    canvas_size = np.array([scene.width - 1.0, scene.height - 1.0])
    if np.any(hi - lo > canvas_size - 4.0):
        raise TrajectoryLeavesCanvas("pair footprint exceeds canvas")
    offset = np.round((canvas_size - (hi + lo)) / 2.0)

    mask = circular_mask(h, w) if circular_fov else np.ones((h, w), dtype=bool)
    rgb_a = _render_frame(coeffs, WarpParams.identity(), offset, frame_shape, supersample)
    off_b = offset + np.asarray(extra_offset_b, dtype=float)
    rgb_b = _render_frame(coeffs, v_b, off_b, frame_shape, supersample)
    if perturb is not None:
        rgb_a = _perturb_frame(rgb_a, perturb, np.random.default_rng([perturb.seed, 404, 0]))
        rgb_b = _perturb_frame(rgb_b, perturb, np.random.default_rng([perturb.seed, 404, 1]))
    frames = []
    for idx, rgb in ((0, rgb_a), (1, rgb_b)):
        rgb = rgb.copy()
        rgb[~mask] = 0.0
        frames.append(Frame(id=idx, pixels=np.round(rgb * 255.0).astype(np.uint8),
                            mask=mask.copy()))
    return frames[0], frames[1]


def ground_truth_error(globals_: list[WarpParams], truth: list[WarpParams],
                       grid: RefGrid) -> np.ndarray:
    """Per-frame maximum deviation between estimated and true global warps."""
    if len(globals_) != len(truth):
        raise LengthMismatch(f"{len(globals_)} globals vs {len(truth)} truth warps")
    return np.array([warp_distance(g, t, grid) for g, t in zip(globals_, truth)])
