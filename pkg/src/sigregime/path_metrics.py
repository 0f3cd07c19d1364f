"""Kernel distances between collections of signatures and the similarity
functions that feed the clusterer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "KernelConfig",
    "RegimePoint",
    "gaussian_kernel",
    "mmd",
    "gaussian_similarity",
    "inverse_similarity",
    "inverse_square_similarity",
    "xi_heuristic",
    "median_bandwidth",
    "distance_matrix",
]

# Squared MMD below -NEGATIVE_TOL points to a broken kernel rather than rounding.
NEGATIVE_TOL = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class RegimePoint:
    """A non-empty collection of equal-length signature vectors (one per row)."""

    signatures: np.ndarray

    def __post_init__(self):
        arr = np.array(self.signatures, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("a regime point needs a non-empty 2-d array of signatures")
        arr.flags.writeable = False
        object.__setattr__(self, "signatures", arr)

    def __len__(self):
        return self.signatures.shape[0]

    @property
    def width(self) -> int:
        return self.signatures.shape[1]


def _as_point(x) -> RegimePoint:
    return x if isinstance(x, RegimePoint) else RegimePoint(x)


def gaussian_kernel(x, y, cfg: KernelConfig) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return math.exp(-float(np.sum((x - y) ** 2)) / (2.0 * cfg.bandwidth**2))


def _gram_mean(a: np.ndarray, b: np.ndarray, bandwidth: float) -> float:
    return float(np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth**2)).mean())


def mmd(X, Y, cfg: KernelConfig) -> float:
    """Biased empirical MMD between two collections with a Gaussian kernel.

    The squared value is clamped at zero before the square root; anything
    more negative than ``NEGATIVE_TOL`` raises.
    """
    X = _as_point(X)
    Y = _as_point(Y)
    if X.width != Y.width:
        raise ValueError(f"vector length mismatch: {X.width} vs {Y.width}")
    xs, ys = X.signatures, Y.signatures
    sq = (
        _gram_mean(xs, xs, cfg.bandwidth)
        - 2.0 * _gram_mean(xs, ys, cfg.bandwidth)
        + _gram_mean(ys, ys, cfg.bandwidth)
    )
    if sq < -NEGATIVE_TOL:
        raise ArithmeticError(f"squared MMD is negative ({sq:.3e})")
    return math.sqrt(max(sq, 0.0))


def gaussian_similarity(x, xi: float):
    """``exp(-x / xi**2)``; works elementwise on arrays."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    return np.exp(-np.asarray(x, dtype=float) / xi**2)


def inverse_similarity(x):
    return 1.0 / np.asarray(x, dtype=float)


def inverse_square_similarity(x):
    return np.asarray(x, dtype=float) ** -2.0


def xi_heuristic(distances, quantile: float = 0.01) -> float:
    """Nearest-rank ``quantile`` of the strictly positive upper-triangle distances."""
    d = np.asarray(distances, dtype=float)
    upper = d[np.triu_indices(d.shape[0], k=1)]
    positive = np.sort(upper[upper > 0])
    if positive.size == 0:
        raise ValueError("all distances are zero")
    rank = max(1, math.ceil(quantile * positive.size))
    return float(positive[rank - 1])


def median_bandwidth(vectors) -> KernelConfig:
    """Median pairwise Euclidean distance over the pooled vectors."""
    v = np.asarray(vectors, dtype=float)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("need at least 2 vectors")
    med = float(np.median(pdist(v)))
    if med <= 0:
        raise ValueError("median pairwise distance is zero; vectors are (mostly) identical")
    return KernelConfig(med)


def distance_matrix(points: Sequence, cfg: KernelConfig) -> np.ndarray:
    """Pairwise MMD matrix; symmetric with a zero diagonal."""
    pts = [_as_point(p) for p in points]
    n = len(pts)
    if n < 2:
        raise ValueError("need at least 2 points")
    if len({p.width for p in pts}) != 1:
        raise ValueError("all points must share one vector length")
    # Each collection's self-term is reused across its row.
    bw = cfg.bandwidth
    self_terms = [_gram_mean(p.signatures, p.signatures, bw) for p in pts]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sq = self_terms[i] - 2.0 * _gram_mean(pts[i].signatures, pts[j].signatures, bw) + self_terms[j]
            if sq < -NEGATIVE_TOL:
                raise ArithmeticError(f"squared MMD is negative ({sq:.3e}) for pair ({i}, {j})")
            out[i, j] = out[j, i] = math.sqrt(max(sq, 0.0))
    return out
