"""Bag-of-visual-words retrieval of overlapping frame pairs.

Dense gradient-histogram descriptors (SIFT-like pooling: 4x4 spatial cells of
8 orientation bins over a 32x32 patch) are quantized against a K-means
vocabulary; each frame becomes a word-count signature and frames are compared
by the cosine similarity of their signatures. Thresholding the resulting
similarity matrix proposes non-consecutive pairs worth registering.

Everything is deterministic for a fixed seed: descriptors are sorted
canonically before clustering (so the vocabulary does not depend on frame
order), centroid assignment breaks ties toward the lowest index, and empty
clusters are re-seeded from the farthest point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import TooFewDescriptors
from .imageproc import erode_mask, raw_gradients

log = logging.getLogger(__name__)

DESCRIPTOR_DIM = 128
PATCH = 32          # descriptor support, pixels
CELLS = 4           # spatial cells per axis
N_BINS = 8          # orientation bins over [0, 2pi)
CLAMP = 0.2         # per-entry clamp before renormalization


@dataclass
class Descriptor:
    vector: np.ndarray  # (128,), unit L2 norm
    keypoint: tuple[float, float]


@dataclass
class Vocabulary:
    centroids: np.ndarray  # (K, 128)
    kmeans_seed: int
    inertia: float

    def __post_init__(self):
        k = self.centroids.shape[0]
        if k < 1:
            raise ValueError("vocabulary needs at least one centroid")
        if k >= 2:
            d2 = _pairwise_sq_dists(self.centroids, self.centroids)
            np.fill_diagonal(d2, np.inf)
            if np.sqrt(d2.min()) <= 1e-9:
                raise ValueError("vocabulary centroids are not pairwise distinct")


@dataclass
class Signature:
    counts: np.ndarray  # (K,) non-negative ints, sums to the descriptor count


@dataclass
class SimilarityMatrix:
    s: np.ndarray  # (N, N) symmetric, values in [0, 1]


def extract_descriptors(frame_gray: np.ndarray, mask: np.ndarray,
                        step: int = 16) -> list[Descriptor]:
    """Descriptors on a regular keypoint lattice inside the eroded mask.

    Keypoints keep a patch-half-width margin to the frame border; gradients
    outside the eroded mask are zeroed so the field-of-view boundary does not
    dominate the histograms. Flat patches (all-zero descriptors) are dropped.
    """
    if step < 4:
        raise ValueError("keypoint step must be >= 4")
    h, w = frame_gray.shape
    half = PATCH // 2
    gx, gy = raw_gradients(frame_gray)
    inner = erode_mask(mask, 2)
    gx = np.where(inner, gx, 0.0)
    gy = np.where(inner, gy, 0.0)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((ang / (2.0 * np.pi / N_BINS)).astype(np.intp), N_BINS - 1)

    cell = PATCH // CELLS
    row_cell = (np.arange(PATCH) // cell)
    cell_idx = (row_cell[:, None] * CELLS + row_cell[None, :]) * N_BINS

    out: list[Descriptor] = []
    for y in range(half, h - half + 1, step):
        for x in range(half, w - half + 1, step):
            if not inner[y, x]:
                continue
            sl = (slice(y - half, y + half), slice(x - half, x + half))
            flat = (cell_idx + bins[sl]).ravel()
            hist = np.bincount(flat, weights=mag[sl].ravel(),
                               minlength=DESCRIPTOR_DIM)
            norm = np.linalg.norm(hist)
            if norm < 1e-12:
                continue
            hist = np.minimum(hist / norm, CLAMP)
            norm = np.linalg.norm(hist)
            if norm < 1e-12:
                continue
            out.append(Descriptor(vector=hist / norm, keypoint=(float(x), float(y))))
    return out


def descriptor_matrix(descriptors: list[Descriptor]) -> np.ndarray:
    if not descriptors:
        return np.zeros((0, DESCRIPTOR_DIM))
    return np.vstack([d.vector for d in descriptors])


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
          - 2.0 * (a @ b.T))
    return np.maximum(d2, 0.0)


def _assign(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per point; ties resolve to the lowest index."""
    return np.argmin(_pairwise_sq_dists(data, centroids), axis=1)


def build_vocabulary(descriptors: list[Descriptor] | np.ndarray, k: int,
                     seed: int, max_iters: int = 100) -> Vocabulary:
    """Lloyd's K-means with k-means++ seeding.

    Descriptors are sorted lexicographically first, so the result depends only
    on the descriptor multiset (frame order is irrelevant). Empty clusters are
    re-seeded from the point farthest from its assigned centroid.
    """
    data = descriptors if isinstance(descriptors, np.ndarray) \
        else descriptor_matrix(descriptors)
    n = data.shape[0]
    if n < k:
        raise TooFewDescriptors(f"{n} descriptors for K={k}")
    order = np.lexsort(data.T[::-1])
    data = data[order]

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, k, rng)
    assign = _assign(data, centroids)
    for _ in range(max_iters):
        for c in range(k):
            members = assign == c
            if members.any():
                centroids[c] = data[members].mean(axis=0)
            else:
                dists = np.sum((data - centroids[assign]) ** 2, axis=1)
                far = int(np.argmax(dists))
                centroids[c] = data[far]
                assign[far] = c
        new_assign = _assign(data, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    inertia = float(np.sum((data - centroids[assign]) ** 2))
    return Vocabulary(centroids=centroids, kmeans_seed=seed, inertia=inertia)


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[rng.integers(n)]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[c] = data[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[c] = data[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((data - centroids[c]) ** 2, axis=1))
    return centroids


def compute_signature(descriptors: list[Descriptor], vocab: Vocabulary) -> Signature:
    data = descriptor_matrix(descriptors)
    k = vocab.centroids.shape[0]
    if data.shape[0] == 0:
        return Signature(counts=np.zeros(k, dtype=np.int64))
    assign = _assign(data, vocab.centroids)
    return Signature(counts=np.bincount(assign, minlength=k).astype(np.int64))


def cosine_similarity(u: Signature, v: Signature) -> float:
    """Cosine of the angle between count vectors; 0 if either is all-zero."""
    a, b = u.counts.astype(float), v.counts.astype(float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def build_similarity_matrix(signatures: list[Signature]) -> SimilarityMatrix:
    """Full symmetric N x N cosine similarity of frame signatures."""
    if len(signatures) < 2:
        raise ValueError("need at least two signatures")
    counts = np.vstack([s.counts for s in signatures]).astype(float)
    norms = np.linalg.norm(counts, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = counts / safe[:, None]
    s = unit @ unit.T
    s = np.clip((s + s.T) / 2.0, 0.0, 1.0)  # enforce exact symmetry
    nz = norms > 0.0
    s[np.diag_indices_from(s)] = np.where(nz, 1.0, 0.0)
    return SimilarityMatrix(s=s)


def select_pairs(sim: SimilarityMatrix, threshold: float = 0.85,
                 budget: int | None = None, min_gap: int = 10
                 ) -> list[tuple[int, int]]:
    """Non-consecutive pairs above the similarity threshold.

    Pairs are sorted by similarity descending (index order breaking ties) and
    truncated to the budget; consecutive pairs are always excluded since they
    are registered unconditionally.
    """
    if threshold < 0.0:
        raise ValueError("threshold must be non-negative")
    # thresholds above 1 are allowed and trivially select nothing
    if min_gap < 2:
        raise ValueError("min_gap must be >= 2")
    n = sim.s.shape[0]
    if budget is None:
        budget = 3 * n
    if budget < 0:
        raise ValueError("budget must be >= 0")
    cand = []
    for i in range(n):
        for j in range(i + min_gap, n):
            if sim.s[i, j] >= threshold:
                cand.append((-sim.s[i, j], i, j))
    cand.sort()
    return [(i, j) for _, i, j in cand[:budget]]
