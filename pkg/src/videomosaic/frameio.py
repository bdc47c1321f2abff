"""PNG input/output for frames, masks and mosaics."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imageproc import Frame, circular_mask


def load_frame(path: str | Path, frame_id: int,
               mask: np.ndarray | None = None) -> Frame:
    """Read an 8-bit RGB PNG; default mask is all-valid."""
    img = np.asarray(Image.open(path).convert("RGB"))
    if mask is None:
        mask = np.ones(img.shape[:2], dtype=bool)
    return Frame(id=frame_id, pixels=img, mask=mask)


def load_mask(path: str | Path) -> np.ndarray:
    """Nonzero pixels of a grayscale PNG mark valid frame area."""
    return np.asarray(Image.open(path).convert("L")) > 0


def frame_mask(shape: tuple[int, int], kind: str = "full",
               center: tuple[float, float] | None = None,
               radius: float | None = None) -> np.ndarray:
    if kind == "full":
        return np.ones(shape, dtype=bool)
    if kind == "circular":
        return circular_mask(shape[0], shape[1], center, radius)
    raise ValueError(f"unknown mask kind {kind!r}")


def load_frames_dir(frames_dir: str | Path, mask_kind: str = "full",
                    mask_dir: str | Path | None = None,
                    center: tuple[float, float] | None = None,
                    radius: float | None = None) -> list[Frame]:
    """All PNG frames of a directory in lexicographic filename order."""
    frames_dir = Path(frames_dir)
    paths = sorted(frames_dir.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {frames_dir}")
    frames = []
    for idx, path in enumerate(paths):
        img = np.asarray(Image.open(path).convert("RGB"))
        if mask_dir is not None:
            mask = load_mask(Path(mask_dir) / path.name)
        else:
            mask = frame_mask(img.shape[:2], mask_kind, center, radius)
        frames.append(Frame(id=idx, pixels=img, mask=mask))
    return frames


def save_frame_png(frame: Frame, path: str | Path) -> None:
    Image.fromarray(frame.pixels, mode="RGB").save(path)


def save_rgba_png(rgba: np.ndarray, path: str | Path) -> None:
    Image.fromarray(rgba, mode="RGBA").save(path)
