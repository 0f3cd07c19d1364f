"""Multiscale k-prototypes clustering driven by random-walk eigengaps.

Points are linked through a similarity matrix ``W``; the random walk
``P = D^-1 W`` is diagonalised once, after which every power ``P^t`` and every
eigengap ``lambda_k^t - lambda_{k+1}^t`` is cheap. Local maxima of the largest
eigengap pick the time scales (and cluster counts) worth reporting, and the
rows of ``P^t`` are grouped with a KL-divergence variant of Lloyd's algorithm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import xlogy

logger = logging.getLogger(__name__)

__all__ = [
    "TransitionSpectrum",
    "EigengapProfile",
    "Partition",
    "PrototypeSet",
    "Suggestion",
    "build_similarity",
    "transition_matrix",
    "spectrum",
    "power_rows",
    "eigengap_profile",
    "kl_divergence",
    "kl_matrix",
    "init_prototypes",
    "k_prototypes",
    "multiscale_cluster",
    "cluster_similarity",
    "ClusteringResult",
    "DEFAULT_T",
    "DEFAULT_RESTARTS",
    "MAX_ITERS",
]

DEFAULT_T = 2000
DEFAULT_RESTARTS = 10
MAX_ITERS = 300
_NORM_TOL = 1e-8


def build_similarity(distances, similarity: Callable) -> np.ndarray:
    """Apply a decreasing ``similarity`` elementwise to a distance matrix.

    Similarities that blow up at zero (``1/x``, ``1/x**2``) get a finite
    self-weight equal to the row's off-diagonal total. That is the lazy walk
    ``(I + P0) / 2``: its spectrum lies in ``[0, 1]``, so powers do not
    oscillate and every eigengap stays at or below 1.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distances must be a square matrix")
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    if not np.allclose(d, d.T, rtol=0.0, atol=1e-12):
        raise ValueError("distances must be symmetric")
    if np.any(np.diag(d) != 0):
        raise ValueError("distances must have a zero diagonal")
    with np.errstate(divide="ignore"):
        w = np.asarray(similarity(d), dtype=float)
    if w.shape != d.shape:
        raise ValueError("similarity must act elementwise")
    diag = np.eye(d.shape[0], dtype=bool)
    if np.any(~np.isfinite(w[~diag])):
        raise ValueError("similarity is not finite off the diagonal (duplicate points?)")
    if np.any(~np.isfinite(w[diag])):
        w[diag] = 0.0
        w[diag] = w.sum(axis=1)
    return w


def transition_matrix(W) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalise ``W``; returns ``(P, degrees)``."""
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("every row of W needs a positive sum")
    return W / deg[:, None], deg


@dataclass(frozen=True)
class TransitionSpectrum:
    """Eigen-decomposition of ``P = D^-1 W``.

    ``eigenvectors[:, k]`` is a right eigenvector of ``P`` scaled so that
    ``v^T D v = 1``; eigenvalues are sorted in descending order.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def projector(self, k: int) -> np.ndarray:
        """``A_k = v_k v_k^T D / (v_k^T D v_k)`` for 0-based ``k``."""
        v = self.eigenvectors[:, k]
        return np.outer(v, v * self.degrees) / float(v @ (self.degrees * v))

    def transition(self) -> np.ndarray:
        return power_rows(self, 1)


def spectrum(W) -> TransitionSpectrum:
    """Spectrum of the random walk via its symmetric conjugate ``D^-1/2 W D^-1/2``."""
    W = np.asarray(W, dtype=float)
    if not np.allclose(W, W.T, rtol=0.0, atol=1e-12):
        raise ValueError("W must be symmetric")
    _, deg = transition_matrix(W)
    inv_sqrt = 1.0 / np.sqrt(deg)
    sym = W * inv_sqrt[:, None] * inv_sqrt[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        lam, u = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    vecs = u[:, order] * inv_sqrt[:, None]
    # Rounding can push the top eigenvalue a hair above 1.
    lam = np.clip(lam, -1.0, 1.0)
    return TransitionSpectrum(lam, vecs, deg)


def _powers(lam: np.ndarray, t) -> np.ndarray:
    return np.power(lam[:, None], np.asarray(t, dtype=np.int64)[None, :])


def power_rows(spec: TransitionSpectrum, t: int) -> np.ndarray:
    """``P^t = sum_k lambda_k^t A_k``; row ``i`` is the walker's law after ``t`` steps."""
    if t < 1:
        raise ValueError("t must be at least 1")
    lam_t = spec.eigenvalues**t
    v = spec.eigenvectors
    return (v * lam_t[None, :]) @ (v * spec.degrees[:, None]).T


@dataclass(frozen=True)
class EigengapProfile:
    """Eigengaps ``gaps[k-1, t-1] = lambda_k^t - lambda_{k+1}^t`` for ``k = 1..k_max``."""

    gaps: np.ndarray
    revealed: np.ndarray  # K_t, 1-based cluster counts
    maximal: np.ndarray  # Delta(t)
    local_maxima: tuple[int, ...]  # 1-based steps

    @property
    def T(self) -> int:
        return self.gaps.shape[1]

    @property
    def k_max(self) -> int:
        return self.gaps.shape[0]

    def gap(self, k: int, t: int) -> float:
        return float(self.gaps[k - 1, t - 1])

    def revealer(self, k: int) -> int | None:
        """Step ``t_k`` in ``{t : K_t = k}`` where ``Delta_k`` peaks, or ``None``."""
        steps = np.flatnonzero(self.revealed == k)
        if steps.size == 0:
            return None
        return int(steps[np.argmax(self.gaps[k - 1, steps])]) + 1


def _local_maxima(values: np.ndarray) -> tuple[int, ...]:
    """1-based local maxima; a plateau counts once, at its first step.

    A profile that is constant over the whole range yields its first step if
    the constant is positive and nothing otherwise.
    """
    n = values.size
    if n == 0:
        return ()
    if np.all(values == values[0]):
        return (1,) if values[0] > 0 else ()
    out = []
    start = 0
    while start < n:
        end = start
        while end + 1 < n and values[end + 1] == values[start]:
            end += 1
        left_ok = start == 0 or values[start - 1] < values[start]
        right_ok = end == n - 1 or values[end + 1] < values[start]
        if left_ok and right_ok:
            out.append(start + 1)
        start = end + 1
    return tuple(out)


def eigengap_profile(spec: TransitionSpectrum, T: int = DEFAULT_T, k_max: int | None = None) -> EigengapProfile:
    """Scan ``t = 1..T`` and collect eigengaps for ``k = 1..k_max``.

    ``k_max`` defaults to ``n``, with ``lambda_{n+1} = 0`` so that ``n``
    singletons can be revealed too. Negative eigenvalues are raised to the
    power as-is, so gaps may go negative at even ``t``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    n = spec.n
    if n < 2:
        raise ValueError("need at least 2 points")
    k_max = n if k_max is None else min(k_max, n)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    t = np.arange(1, T + 1)
    lam = np.append(spec.eigenvalues, 0.0)[: k_max + 1]
    pw = _powers(lam, t)
    gaps = pw[:-1] - pw[1:]
    revealed = np.argmax(gaps, axis=0) + 1
    maximal = gaps.max(axis=0)
    return EigengapProfile(gaps, revealed, maximal, _local_maxima(maximal))


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > _NORM_TOL:
        raise ValueError(f"{name} does not sum to 1 (sum={p.sum()!r})")


def kl_divergence(p, q) -> float:
    """``sum p log(p/q)`` with ``0 log 0 = 0``; ``inf`` when ``q`` misses ``p``'s support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    if np.any((p > 0) & (q == 0)):
        return float("inf")
    mask = p > 0
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))), 0.0)


def kl_matrix(rows: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """``out[m, j] = KL(rows[m] || protos[j])`` without validation."""
    neg_entropy = xlogy(rows, rows).sum(axis=1)
    zero = protos <= 0
    with np.errstate(divide="ignore"):
        log_q = np.where(zero, 0.0, np.log(np.where(zero, 1.0, protos)))
    out = neg_entropy[:, None] - rows @ log_q.T
    missing = (rows > 0).astype(float) @ zero.T.astype(float) > 0
    out[missing] = np.inf
    return np.maximum(out, 0.0)


def _as_distributions(Pt) -> np.ndarray:
    """Clip rounding negatives from the spectral formula and renormalise."""
    rows = np.clip(np.asarray(Pt, dtype=float), 0.0, None)
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("rows of P^t must be distributions")
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("rows of P^t must sum to 1")
    return rows / sums


@dataclass(frozen=True)
class PrototypeSet:
    """``k x n`` row-stochastic matrix of prototype distributions."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2:
            raise ValueError("prototypes must be a 2-d array")
        if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("prototype rows must be distributions")
        object.__setattr__(self, "Q", Q)

    @property
    def k(self) -> int:
        return self.Q.shape[0]


def _farthest_row(rows: np.ndarray, protos: np.ndarray, exclude=()) -> int:
    score = kl_matrix(rows, protos).min(axis=1)
    if len(exclude):
        score[list(exclude)] = -np.inf
    return int(np.argmax(score))


def init_prototypes(Pt, k: int, rng: np.random.Generator) -> PrototypeSet:
    """Farthest-first seeding: a random row, then rows maximising the minimum KL."""
    rows = _as_distributions(Pt)
    n = rows.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        chosen.append(_farthest_row(rows, rows[chosen], exclude=chosen))
    return PrototypeSet(rows[chosen])


@dataclass(frozen=True)
class Partition:
    """``labels[i]`` in ``0..k-1``; ``objective`` is the KL cost at the fixed point."""

    labels: np.ndarray
    k: int
    objective: float = float("nan")
    iterations: int = 0
    history: tuple[float, ...] = ()

    def groups(self) -> list[list[int]]:
        return [np.flatnonzero(self.labels == j).tolist() for j in range(self.k)]

    def as_sets(self) -> set[frozenset[int]]:
        """Label-free view of the partition."""
        return {frozenset(g) for g in self.groups()}


def _objective(rows: np.ndarray, Q: np.ndarray, labels: np.ndarray) -> float:
    kl = kl_matrix(rows, Q)
    return float(kl[np.arange(rows.shape[0]), labels].sum())


def _update(rows: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    Q = np.zeros((k, rows.shape[1]))
    filled = []
    empty = []
    for j in range(k):
        members = labels == j
        if members.any():
            Q[j] = rows[members].mean(axis=0)
            filled.append(j)
        else:
            empty.append(j)
    for j in empty:
        Q[j] = rows[_farthest_row(rows, Q[filled])]
        filled.append(j)
    return Q


def k_prototypes(Pt, k: int, Q0: PrototypeSet, max_iters: int = MAX_ITERS) -> Partition:
    """Lloyd-style alternation of KL assignment and row averaging.

    Stops at an assignment fixed point or after ``max_iters`` updates. Empty
    clusters are reseeded with the row farthest (in min-KL) from the defined
    prototypes.
    """
    rows = _as_distributions(Pt)
    n = rows.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    if Q0.k != k or Q0.Q.shape[1] != n:
        raise ValueError("initial prototypes do not match (k, n)")
    Q = Q0.Q
    labels = np.argmin(kl_matrix(rows, Q), axis=1)
    history = [_objective(rows, Q, labels)]
    it = 0
    for it in range(1, max_iters + 1):
        Q = _update(rows, labels, k)
        history.append(_objective(rows, Q, labels))
        new = np.argmin(kl_matrix(rows, Q), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        history.append(_objective(rows, Q, labels))
    else:
        logger.warning("k_prototypes hit max_iters=%d before converging", max_iters)
    labels = _fill_empty(rows, labels, k)
    Q = _update(rows, labels, k)
    return Partition(labels, k, _objective(rows, Q, labels), it, tuple(history))


def _fill_empty(rows: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    # Only reachable with duplicated rows; moves the farthest movable row over.
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = [m for m in range(rows.shape[0]) if counts[labels[m]] > 1]
        Q = _update(rows, labels, k)
        filled = [i for i in range(k) if counts[i] > 0]
        score = kl_matrix(rows[movable], Q[filled]).min(axis=1)
        labels[movable[int(np.argmax(score))]] = j
    return labels


def _best_partition(Pt, k: int, restarts: int, rng: np.random.Generator) -> Partition:
    best = None
    for child in rng.spawn(restarts):
        part = k_prototypes(Pt, k, init_prototypes(Pt, k, child))
        if best is None or part.objective < best.objective:
            best = part
    return _canonical(best)


def _canonical(part: Partition) -> Partition:
    """Relabel so clusters are numbered by their smallest member."""
    order = {}
    for lab in part.labels:
        order.setdefault(int(lab), len(order))
    labels = np.array([order[int(lab)] for lab in part.labels])
    return Partition(labels, part.k, part.objective, part.iterations, part.history)


@dataclass(frozen=True)
class Suggestion:
    """One suggested clustering: ``k`` groups revealed best after ``t`` steps."""

    k: int
    labels: np.ndarray
    separation: float
    t: int
    trivial: bool = False
    objective: float = float("nan")


@dataclass
class ClusteringResult:
    suggestions: list[Suggestion]
    profile: EigengapProfile
    spectrum: TransitionSpectrum
    extra: dict = field(default_factory=dict)


def cluster_similarity(
    W,
    T: int = DEFAULT_T,
    restarts: int = DEFAULT_RESTARTS,
    rng: np.random.Generator | None = None,
    k_max: int | None = None,
) -> ClusteringResult:
    """Suggest clusterings at every time scale where the largest eigengap peaks.

    For each local maximum of ``Delta(t)`` the revealed ``k`` is recorded; each
    distinct ``k`` is then clustered on ``P^{t_k}`` at its revealer step ``t_k``
    and scored by ``Delta_k(t_k)``. Suggestions come back sorted by separation,
    largest first; ``k = 1`` entries are kept but flagged trivial.
    """
    if rng is None:
        raise ValueError("an explicit random generator is required")
    W = np.asarray(W, dtype=float)
    if W.shape[0] < 2:
        raise ValueError("need at least 2 points")
    spec = spectrum(W)
    profile = eigengap_profile(spec, T, k_max)
    ks = []
    for t in profile.local_maxima:
        k = int(profile.revealed[t - 1])
        if k not in ks:
            ks.append(k)
    suggestions = []
    children = rng.spawn(len(ks))
    for k, child in zip(ks, children):
        t_k = profile.revealer(k)
        separation = profile.gap(k, t_k)
        if k == 1:
            labels = np.zeros(spec.n, dtype=int)
            suggestions.append(Suggestion(1, labels, separation, t_k, trivial=True, objective=0.0))
            continue
        part = _best_partition(power_rows(spec, t_k), k, restarts, child)
        suggestions.append(Suggestion(k, part.labels, separation, t_k, objective=part.objective))
    suggestions.sort(key=lambda s: (-s.separation, s.k))
    return ClusteringResult(suggestions, profile, spec)


def multiscale_cluster(
    distances,
    similarity: Callable,
    T: int = DEFAULT_T,
    restarts: int = DEFAULT_RESTARTS,
    rng: np.random.Generator | None = None,
    k_max: int | None = None,
) -> ClusteringResult:
    """Full pipeline from a distance matrix; see :func:`cluster_similarity`."""
    return cluster_similarity(build_similarity(distances, similarity), T, restarts, rng, k_max)
