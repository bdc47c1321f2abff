"""Image primitives for dense registration.

Grayscale conversion, masked Gaussian pyramids, gradient fields with unit
normalization and validity masks, bilinear sampling, and field-of-view masks.
All images are float64 in [0, 1] internally; coordinates are (x, y) =
(column, row) with pixel centers at integer positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import TooSmallForPyramid

log = logging.getLogger(__name__)

GRAD_EPS_DEFAULT = 1e-4
MIN_LEVEL_SIZE = 4
PYRAMID_SIGMA = 1.0


@dataclass
class Frame:
    """One video frame: interleaved 8-bit RGB plus a validity mask."""

    id: int
    pixels: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray    # (H, W) bool, True = usable field-of-view pixel

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8 RGB")
        h, w = self.pixels.shape[:2]
        if h < 16 or w < 16:
            raise ValueError(f"frame must be at least 16x16, got {w}x{h}")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (h, w):
            raise ValueError("mask shape must match pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass
class GradientField:
    """Unit-normalized image gradients with a per-pixel validity mask.

    ``gx**2 + gy**2 == 1`` wherever ``valid``; pixels whose raw gradient
    magnitude falls below ``grad_eps``, or that sit outside the (eroded)
    frame mask, are invalid and carry zero components.
    """

    gx: np.ndarray
    gy: np.ndarray
    valid: np.ndarray
    level: int = 0


@dataclass
class PyramidLevel:
    gray: np.ndarray
    mask: np.ndarray
    gradients: GradientField


@dataclass
class Pyramid:
    """Gaussian pyramid, finest level first (coarsest last)."""

    levels: list[PyramidLevel] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def shape(self, level: int) -> tuple[int, int]:
        return self.levels[level].gray.shape


def to_grayscale(frame: Frame) -> np.ndarray:
    """Luminance in [0, 1]: 0.299 R + 0.587 G + 0.114 B."""
    rgb = frame.pixels.astype(np.float64) / 255.0
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def circular_mask(height: int, width: int, center: tuple[float, float] | None = None,
                  radius: float | None = None) -> np.ndarray:
    """Boolean disk mask, the usual scope-video field of view."""
    if center is None:
        center = ((width - 1) / 2.0, (height - 1) / 2.0)
    if radius is None:
        radius = 0.48 * min(width, height)
    yy, xx = np.mgrid[0:height, 0:width]
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2


def erode_mask(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Erode with the 4-connected cross; image border counts as invalid."""
    if iterations <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, iterations=iterations, border_value=0)


def masked_blur(gray: np.ndarray, mask: np.ndarray, sigma: float = PYRAMID_SIGMA) -> np.ndarray:
    """Gaussian blur that does not bleed values across the mask boundary.

    Normalized convolution: blur(I*m) / blur(m). Pixels with no valid
    support keep value 0.
    """
    m = mask.astype(np.float64)
    # truncate=2.0 with sigma=1.0 gives the 5-tap kernel
    num = ndimage.gaussian_filter(gray * m, sigma=sigma, truncate=2.0, mode="nearest")
    den = ndimage.gaussian_filter(m, sigma=sigma, truncate=2.0, mode="nearest")
    out = np.zeros_like(gray)
    good = den > 1e-12
    out[good] = num[good] / den[good]
    return out


def raw_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient (gx, gy) = (d/dx, d/dy)."""
    gy, gx = np.gradient(gray)
    return gx, gy


def compute_gradient_field(gray: np.ndarray, mask: np.ndarray,
                           grad_eps: float = GRAD_EPS_DEFAULT, level: int = 0) -> GradientField:
    """Normalized gradient field with validity.

    Central differences read both neighbors, so the mask is eroded by one
    pixel before the validity test; magnitudes below ``grad_eps`` are
    numerically meaningless orientations and are masked out.
    """
    if gray.shape != mask.shape:
        raise ValueError("gray and mask dimensions must match")
    gx, gy = raw_gradients(gray)
    mag = np.hypot(gx, gy)
    valid = erode_mask(mask, 1) & (mag >= grad_eps)
    out_gx = np.zeros_like(gx)
    out_gy = np.zeros_like(gy)
    out_gx[valid] = gx[valid] / mag[valid]
    out_gy[valid] = gy[valid] / mag[valid]
    return GradientField(gx=out_gx, gy=out_gy, valid=valid, level=level)


def max_pyramid_levels(height: int, width: int) -> int:
    """Deepest pyramid whose coarsest level is still >= 4x4."""
    levels = 1
    h, w = height, width
    while True:
        h2, w2 = -(-h // 2), -(-w // 2)
        if h2 < MIN_LEVEL_SIZE or w2 < MIN_LEVEL_SIZE:
            return levels
        h, w = h2, w2
        levels += 1


def build_pyramid(frame: Frame, num_levels: int = 6,
                  grad_eps: float = GRAD_EPS_DEFAULT) -> Pyramid:
    """Masked Gaussian pyramid with per-level gradient fields.

    Each coarser level is the sigma=1 blur of the previous one decimated by
    two; masks decimate conservatively (a coarse pixel is valid only if all
    of its children are). Depth is clamped so the coarsest level stays at
    least 4x4.
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    h, w = frame.shape
    limit = max_pyramid_levels(h, w)
    if limit < 1:
        raise TooSmallForPyramid(f"{w}x{h} frame cannot support any pyramid level")
    if num_levels > limit:
        log.warning("pyramid depth clamped from %d to %d for %dx%d frame",
                    num_levels, limit, w, h)
        num_levels = limit

    gray = to_grayscale(frame)
    mask = frame.mask.copy()
    pyr = Pyramid()
    pyr.levels.append(PyramidLevel(gray, mask, compute_gradient_field(gray, mask, grad_eps, 0)))
    for lvl in range(1, num_levels):
        blurred = masked_blur(gray, mask)
        gray = blurred[::2, ::2]
        mask = _decimate_mask(mask)
        pyr.levels.append(PyramidLevel(gray, mask, compute_gradient_field(gray, mask, grad_eps, lvl)))
    return pyr


def _decimate_mask(mask: np.ndarray) -> np.ndarray:
    """Coarse pixel valid only when every existing fine child is valid."""
    h, w = mask.shape
    h2, w2 = -(-h // 2), -(-w // 2)
    padded = np.ones((h2 * 2, w2 * 2), dtype=bool)
    padded[:h, :w] = mask
    return padded[0::2, 0::2] & padded[1::2, 0::2] & padded[0::2, 1::2] & padded[1::2, 1::2]


class BilinearSampler:
    """Bilinear interpolation of several arrays at one fixed set of points.

    Footprint bookkeeping is shared: ``inbounds`` marks points whose 2x2
    support lies in the image, and :meth:`valid_fraction` reports how much
    interpolation weight falls on valid pixels of a mask.
    """

    def __init__(self, xs: np.ndarray, ys: np.ndarray, height: int, width: int):
        self.inbounds = (xs >= 0.0) & (xs <= width - 1.0) & (ys >= 0.0) & (ys <= height - 1.0)
        xc = np.clip(xs, 0.0, width - 1.0)
        yc = np.clip(ys, 0.0, height - 1.0)
        x0 = np.minimum(np.floor(xc), width - 2).astype(np.intp)
        y0 = np.minimum(np.floor(yc), height - 2).astype(np.intp)
        self._fx = xc - x0
        self._fy = yc - y0
        self._i00 = (y0, x0)
        self._i01 = (y0, x0 + 1)
        self._i10 = (y0 + 1, x0)
        self._i11 = (y0 + 1, x0 + 1)
        self._w00 = (1.0 - self._fy) * (1.0 - self._fx)
        self._w01 = (1.0 - self._fy) * self._fx
        self._w10 = self._fy * (1.0 - self._fx)
        self._w11 = self._fy * self._fx

    def sample(self, arr: np.ndarray) -> np.ndarray:
        return (self._w00 * arr[self._i00] + self._w01 * arr[self._i01]
                + self._w10 * arr[self._i10] + self._w11 * arr[self._i11])

    def sample_with_gradient(self, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interpolated value plus the exact spatial gradient of the bilinear
        interpolant (corner differences, not a resampled gradient image)."""
        a00, a01 = arr[self._i00], arr[self._i01]
        a10, a11 = arr[self._i10], arr[self._i11]
        val = self._w00 * a00 + self._w01 * a01 + self._w10 * a10 + self._w11 * a11
        ddx = (1.0 - self._fy) * (a01 - a00) + self._fy * (a11 - a10)
        ddy = (1.0 - self._fx) * (a10 - a00) + self._fx * (a11 - a01)
        return val, ddx, ddy

    def valid_fraction(self, mask: np.ndarray) -> np.ndarray:
        m = mask.astype(np.float64)
        return self.sample(m)

    def fully_valid(self, mask: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Points whose entire nonzero interpolation weight lies on ``mask``."""
        return self.inbounds & (self.valid_fraction(mask) >= 1.0 - tol)
