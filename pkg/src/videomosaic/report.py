"""Report artifacts: delimited tables and matplotlib figures.

Everything renders to files (Agg backend); nothing opens windows.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .geometry import WarpParams, apply_warp, invert  # noqa: E402
from .retrieval import SimilarityMatrix  # noqa: E402


def save_similarity_csv(sim: SimilarityMatrix, path: str | Path) -> None:
    np.savetxt(path, sim.s, delimiter=",", fmt="%.6f")


def save_similarity_heatmap(sim: SimilarityMatrix, path: str | Path) -> None:
    """Grayscale frame-by-frame similarity; revisits show as anti-diagonal bands."""
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    im = ax.imshow(sim.s, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xlabel("frame index")
    ax.set_ylabel("frame index")
    ax.set_title("visual similarity")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _center_track(globals_: list[WarpParams], frame_shape: tuple[int, int],
                  skip: list[bool] | None = None) -> np.ndarray:
    h, w = frame_shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    skip = skip or [False] * len(globals_)
    pts = [apply_warp(invert(g), center) for g, s in zip(globals_, skip) if not s]
    return np.array(pts) if pts else np.zeros((0, 2))


def save_trajectory_figure(sequential: list[WarpParams], bundled: list[WarpParams],
                           frame_shape: tuple[int, int], path: str | Path,
                           truth: list[WarpParams] | None = None,
                           skip: list[bool] | None = None) -> None:
    """Frame-center tracks in mosaic coordinates, before and after adjustment."""
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    tracks = [("sequential chain", sequential, "tab:red", "--"),
              ("bundle adjusted", bundled, "tab:blue", "-")]
    if truth is not None:
        tracks.append(("ground truth", truth, "black", ":"))
    for label, warps, color, style in tracks:
        pts = _center_track(warps, frame_shape, skip)
        if pts.size:
            ax.plot(pts[:, 0], pts[:, 1], style, color=color, linewidth=1.2,
                    label=label)
            ax.plot(pts[0, 0], pts[0, 1], "o", color=color, markersize=4)
    ax.set_aspect("equal")
    ax.invert_yaxis()
    ax.set_xlabel("x (mosaic px)")
    ax.set_ylabel("y (mosaic px)")
    ax.set_title("frame-center trajectory")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_residual_figure(distances: list[float], accepted: list[bool],
                         path: str | Path) -> None:
    """Per-constraint max deviation after the global solve."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    d = np.asarray(distances, dtype=float)
    idx = np.arange(d.size)
    acc = np.asarray(accepted, dtype=bool)
    ok = np.isfinite(d)
    ax.bar(idx[ok & acc], d[ok & acc], color="tab:blue", label="accepted")
    if np.any(ok & ~acc):
        ax.bar(idx[ok & ~acc], d[ok & ~acc], color="tab:red", label="rejected")
    ax.set_xlabel("constraint")
    ax.set_ylabel("max deviation (px)")
    ax.set_title("constraint residuals after bundle adjustment")
    if acc.size:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_pairs_csv(records: list[dict], path: str | Path) -> None:
    """Flat per-pair table: endpoints, kind, cost, gate verdict, distance."""
    fields = ["i", "j", "kind", "similarity", "final_cost", "accepted",
              "gate_reason", "distance_after"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec.get(k, "") for k in fields})
