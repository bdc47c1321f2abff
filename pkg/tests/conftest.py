import logging

import numpy as np
import pytest
from scipy import ndimage

from videomosaic.imageproc import Frame

logging.getLogger("videomosaic").setLevel(logging.ERROR)


def smooth_frame(seed: int, size: int = 80, sigma: float = 3.0) -> Frame:
    """Blurred-noise grayscale frame with full mask (smooth test texture)."""
    rng = np.random.default_rng(seed)
    g = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma)
    g = (g - g.min()) / (g.max() - g.min() + 1e-12)
    rgb = np.round(np.dstack([g, g, g]) * 255).astype(np.uint8)
    return Frame(id=0, pixels=rgb, mask=np.ones((size, size), dtype=bool))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
