"""Truncated signatures and log-signatures of piecewise-linear paths.

A truncated tensor series over the alphabet ``{1..d}`` is stored as one dense
block per level ``k = 0..L``; level ``k`` holds ``d**k`` coefficients indexed by
words of length ``k`` in lexicographic order. Signatures are computed exactly as
Chen products of per-segment tensor exponentials.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "TensorSeries",
    "PiecewisePath",
    "words",
    "word_index",
    "identity",
    "segment_signature",
    "chen_concat",
    "path_signature",
    "batch_signature",
    "tensor_exp",
    "log_signature",
    "factorial_scale",
    "term_counts",
    "witt_number",
    "flatten",
]


def words(d: int, k: int) -> Iterator[tuple[int, ...]]:
    """Yield the words of length ``k`` over ``{1..d}`` in lexicographic order."""
    return itertools.product(range(1, d + 1), repeat=k)


def word_index(word: Sequence[int], d: int) -> int:
    """Position of ``word`` inside its level block (letters are 1-based)."""
    idx = 0
    for letter in word:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside alphabet 1..{d}")
        idx = idx * d + (letter - 1)
    return idx


@dataclass(frozen=True)
class TensorSeries:
    """Element of the tensor algebra truncated at ``depth``.

    ``levels[k]`` is a read-only float array of length ``dim**k``.
    """

    dim: int
    depth: int
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if len(self.levels) != self.depth + 1:
            raise ValueError(f"expected {self.depth + 1} levels, got {len(self.levels)}")
        frozen = []
        for k, block in enumerate(self.levels):
            arr = np.array(block, dtype=float).reshape(-1)
            if arr.size != self.dim**k:
                raise ValueError(f"level {k} must have {self.dim**k} entries, got {arr.size}")
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))

    def __getitem__(self, word: Sequence[int]) -> float:
        word = tuple(word)
        if len(word) > self.depth:
            raise KeyError(f"word {word} longer than depth {self.depth}")
        return float(self.levels[len(word)][word_index(word, self.dim)])

    def allclose(self, other: TensorSeries, atol: float = 1e-12) -> bool:
        if (self.dim, self.depth) != (other.dim, other.depth):
            return False
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self.levels, other.levels))

    def max_abs_diff(self, other: TensorSeries) -> float:
        _check_compatible(self, other)
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.levels, other.levels))


@dataclass(frozen=True)
class PiecewisePath:
    """Samples ``(t_i, x_i)`` read as a piecewise-linear curve in ``R^d``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != times.size:
            raise ValueError("values must have shape (n, d) matching times")
        if times.size < 2:
            raise ValueError("a path needs at least 2 samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values) -> PiecewisePath:
        """Path with unit-spaced times ``0, 1, ..., n-1``."""
        values = np.asarray(values, dtype=float)
        return cls(np.arange(values.shape[0], dtype=float), values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def translate(self, c) -> PiecewisePath:
        return PiecewisePath(self.times, self.values + np.asarray(c, dtype=float))

    def __call__(self, t: float) -> np.ndarray:
        """Evaluate the linear interpolant at ``t``."""
        times = self.times
        if not times[0] <= t <= times[-1]:
            raise ValueError(f"t={t} outside [{times[0]}, {times[-1]}]")
        if t == times[-1]:
            return self.values[-1].copy()
        i = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])
        return self.values[i] + (self.values[i + 1] - self.values[i]) * w


def _check_compatible(a: TensorSeries, b: TensorSeries) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} != {b.depth}")


# Batched kernels. Every level is an array of shape (batch, d**k).


def _batch_mul(a: list[np.ndarray], b: list[np.ndarray], depth: int) -> list[np.ndarray]:
    batch = a[0].shape[0]
    out = []
    for k in range(depth + 1):
        acc = a[k] * b[0]
        for i in range(k):
            acc = acc + (a[i][:, :, None] * b[k - i][:, None, :]).reshape(batch, -1)
        out.append(acc)
    return out


def _batch_segment_exp(delta: np.ndarray, depth: int) -> list[np.ndarray]:
    batch = delta.shape[0]
    out = [np.ones((batch, 1))]
    for k in range(1, depth + 1):
        out.append((out[-1][:, :, None] * delta[:, None, :]).reshape(batch, -1) / k)
    return out


def _batch_extend(sig: list[np.ndarray], delta: np.ndarray, depth: int) -> list[np.ndarray]:
    """``sig ⊗ exp(delta)``, evaluated Horner-style from the top level down."""
    batch = delta.shape[0]
    out = [sig[0]]
    for k in range(1, depth + 1):
        # level k of sig ⊗ exp(delta) = sum_j sig[k-j] ⊗ delta^j / j!
        acc = sig[0]
        for j in range(1, k + 1):
            acc = sig[j] + (acc[:, :, None] * delta[:, None, :]).reshape(batch, -1) / (k - j + 1)
        out.append(acc)
    return out


def batch_signature(increments: np.ndarray, depth: int) -> list[np.ndarray]:
    """Signatures of many polylines sharing a segment count.

    Args:
        increments: Array of shape ``(batch, segments, d)``.
        depth: Truncation level.

    Returns:
        List of ``depth + 1`` arrays, level ``k`` of shape ``(batch, d**k)``.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3:
        raise ValueError("increments must have shape (batch, segments, d)")
    batch, n_seg, d = increments.shape
    sig = [np.ones((batch, 1))] + [np.zeros((batch, d**k)) for k in range(1, depth + 1)]
    for s in range(n_seg):
        sig = _batch_extend(sig, increments[:, s, :], depth)
    return sig


def _single(levels: list[np.ndarray], dim: int, depth: int) -> TensorSeries:
    return TensorSeries(dim, depth, tuple(block[0] for block in levels))


def _batched(s: TensorSeries) -> list[np.ndarray]:
    return [block[None, :] for block in s.levels]


def identity(dim: int, depth: int) -> TensorSeries:
    """The unit series ``1``."""
    return TensorSeries(dim, depth, (np.ones(1),) + tuple(np.zeros(dim**k) for k in range(1, depth + 1)))


def segment_signature(displacement, depth: int) -> TensorSeries:
    """Signature of a straight segment: the truncated tensor exponential."""
    delta = np.atleast_1d(np.asarray(displacement, dtype=float))
    if delta.ndim != 1:
        raise ValueError("displacement must be a vector")
    if depth < 0:
        raise ValueError("depth must be non-negative")
    return _single(_batch_segment_exp(delta[None, :], depth), delta.size, depth)


def chen_concat(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Truncated tensor product ``a ⊗ b`` (signature of a concatenation)."""
    _check_compatible(a, b)
    return _single(_batch_mul(_batched(a), _batched(b), a.depth), a.dim, a.depth)


def path_signature(path: PiecewisePath, depth: int) -> TensorSeries:
    """Exact truncated signature of the linear interpolant of ``path``."""
    if not isinstance(path, PiecewisePath):
        path = PiecewisePath.from_values(path)
    if depth < 0:
        raise ValueError("depth must be non-negative")
    return _single(batch_signature(path.increments()[None], depth), path.dim, depth)


def tensor_exp(x: TensorSeries) -> TensorSeries:
    """Truncated exponential of a series with zero constant term."""
    if x.levels[0][0] != 0.0:
        raise ValueError("tensor_exp expects a zero level-0 entry")
    lv = _batched(x)
    result = _batched(identity(x.dim, x.depth))
    power = result
    for n in range(1, x.depth + 1):
        power = [p / n for p in _batch_mul(power, lv, x.depth)]
        result = [r + p for r, p in zip(result, power)]
    return _single(result, x.dim, x.depth)


def log_signature(s: TensorSeries) -> TensorSeries:
    """Truncated tensor logarithm, returned in full tensor coordinates.

    ``s - 1`` is nilpotent at the truncation depth, so the series is summed
    exactly up to ``n = depth``.
    """
    lam0 = float(s.levels[0][0])
    if lam0 <= 0.0:
        raise ValueError(f"log needs a positive level-0 entry, got {lam0}")
    x = [block[None, :] / lam0 for block in s.levels]
    x[0] = np.zeros((1, 1))
    result = [np.zeros_like(block) for block in x]
    power = [np.ones((1, 1))] + [np.zeros_like(block) for block in x[1:]]
    for n in range(1, s.depth + 1):
        power = _batch_mul(power, x, s.depth)
        sign = 1.0 if n % 2 else -1.0
        result = [r + sign / n * p for r, p in zip(result, power)]
    result[0] = np.full((1, 1), math.log(lam0))
    return _single(result, s.dim, s.depth)


def factorial_scale(s: TensorSeries) -> TensorSeries:
    """Multiply level ``k`` by ``k!`` so that all levels are of comparable size."""
    return TensorSeries(s.dim, s.depth, tuple(block * math.factorial(k) for k, block in enumerate(s.levels)))


def _mobius(n: int) -> int:
    result = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    if n > 1:
        result = -result
    return result


def witt_number(d: int, k: int) -> int:
    """Dimension of the degree-``k`` part of the free Lie algebra on ``d`` letters."""
    if k < 1:
        raise ValueError("k must be positive")
    total = sum(_mobius(e) * d ** (k // e) for e in range(1, k + 1) if k % e == 0)
    return total // k


def term_counts(d: int, depth: int) -> tuple[int, int]:
    """Sizes ``(signature, log-signature)`` excluding the constant term."""
    if d < 1 or depth < 0:
        raise ValueError("need d >= 1 and depth >= 0")
    sig = sum(d**k for k in range(1, depth + 1))
    logsig = sum(witt_number(d, k) for k in range(1, depth + 1))
    return sig, logsig


def flatten(s: TensorSeries) -> np.ndarray:
    """Levels ``1..L`` concatenated in word order."""
    if s.depth == 0:
        return np.zeros(0)
    return np.concatenate(s.levels[1:])
