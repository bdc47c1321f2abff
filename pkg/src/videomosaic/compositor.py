"""Render the mosaic from frames and their global warps.

The mosaic extent is the union bounding box of all accepted frames' warped
corners, padded by one pixel. Every stride-th accepted frame is inverse
warped into absolute coordinates with bilinear sampling and blended either
by overwriting (LastWrite) or by feathering, where each contribution is
weighted by its distance to the frame's field-of-view boundary and the
accumulator is normalized at the end. Uncovered pixels stay transparent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMosaic
from .geometry import WarpParams, apply_warp_array, invert
from .imageproc import BilinearSampler, Frame


class BlendMode(str, enum.Enum):
    LAST_WRITE = "last_write"
    FEATHER = "feather"


@dataclass
class MosaicCanvas:
    extent: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (absolute)
    pixels: np.ndarray                 # (H, W, 3) float accumulation
    weight: np.ndarray                 # (H, W) float accumulation

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def to_rgba(self) -> np.ndarray:
        """8-bit RGBA view; zero-weight pixels are fully transparent."""
        h, w = self.weight.shape
        out = np.zeros((h, w, 4), dtype=np.uint8)
        covered = self.weight > 0.0
        rgb = np.zeros_like(self.pixels)
        rgb[covered] = self.pixels[covered] / self.weight[covered, None]
        out[..., :3] = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
        out[..., 3] = np.where(covered, 255, 0)
        return out


def _frame_corners(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    return np.array([[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]])


def composite(frames: list[Frame], globals_: list[WarpParams],
              mode: BlendMode = BlendMode.FEATHER, stride: int = 5,
              skip: list[bool] | None = None) -> MosaicCanvas:
    """Blend every stride-th accepted frame into the mosaic canvas."""
    if len(frames) != len(globals_):
        raise ValueError("frames and globals must align")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    skip = skip or [False] * len(frames)
    accepted = [k for k in range(len(frames)) if not skip[k]]
    if not accepted:
        raise EmptyMosaic("no accepted frame to composite")

    inverses = {k: invert(globals_[k]) for k in accepted}
    corners = np.vstack([apply_warp_array(inverses[k], _frame_corners(frames[k].shape))
                         for k in accepted])
    x_min = int(np.floor(corners[:, 0].min())) - 1
    y_min = int(np.floor(corners[:, 1].min())) - 1
    x_max = int(np.ceil(corners[:, 0].max())) + 1
    y_max = int(np.ceil(corners[:, 1].max())) + 1
    height, width = y_max - y_min + 1, x_max - x_min + 1

    pixels = np.zeros((height, width, 3))
    weight = np.zeros((height, width))

    for k in accepted[::stride]:
        frame = frames[k]
        h, w = frame.shape
        fc = apply_warp_array(inverses[k], _frame_corners(frame.shape))
        bx0 = max(int(np.floor(fc[:, 0].min())), x_min)
        by0 = max(int(np.floor(fc[:, 1].min())), y_min)
        bx1 = min(int(np.ceil(fc[:, 0].max())), x_max)
        by1 = min(int(np.ceil(fc[:, 1].max())), y_max)
        if bx1 < bx0 or by1 < by0:
            continue
        ys, xs = np.mgrid[by0:by1 + 1, bx0:bx1 + 1]
        pts = np.column_stack([xs.ravel().astype(float), ys.ravel().astype(float)])
        local = apply_warp_array(globals_[k], pts)
        sampler = BilinearSampler(local[:, 0], local[:, 1], h, w)
        ok = sampler.fully_valid(frame.mask)
        if not ok.any():
            continue
        rgb = np.stack([sampler.sample(frame.pixels[..., c].astype(np.float64) / 255.0)
                        for c in range(3)], axis=-1)
        rows = ys.ravel()[ok] - y_min
        cols = xs.ravel()[ok] - x_min
        if mode == BlendMode.LAST_WRITE:
            pixels[rows, cols] = rgb[ok]
            weight[rows, cols] = 1.0
        else:
            # pad so the frame border counts as field-of-view boundary
            padded = np.pad(frame.mask, 1, constant_values=False)
            dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
            wgt = np.maximum(sampler.sample(dist)[ok], 0.0)
            pixels[rows, cols] += rgb[ok] * wgt[:, None]
            weight[rows, cols] += wgt

    return MosaicCanvas(extent=(x_min, y_min, x_max, y_max), pixels=pixels,
                        weight=weight)
