"""Synthetic market data: geometric Brownian motion regimes turned into
collections of path signatures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .path_metrics import RegimePoint
from .tensor_signature import PiecewisePath, batch_signature, term_counts

__all__ = [
    "GbmParams",
    "RegimeSpec",
    "SampledSeries",
    "RectilinearPath",
    "DEFAULT_REGIMES",
    "gbm_path",
    "gbm_paths",
    "time_augment",
    "linear_interpolate",
    "rectilinear_interpolate",
    "regime_point",
    "signatures_from_paths",
    "write_paths_csv",
]


@dataclass(frozen=True)
class GbmParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class RegimeSpec:
    regimes: tuple[GbmParams, ...]

    def __post_init__(self):
        if not self.regimes:
            raise ValueError("at least one regime is required")
        object.__setattr__(self, "regimes", tuple(self.regimes))

    def __len__(self):
        return len(self.regimes)

    def __iter__(self):
        return iter(self.regimes)


# Four (drift, volatility) regimes used in the synthetic experiment.
DEFAULT_REGIMES = RegimeSpec(
    (
        GbmParams(0.05, 0.10),
        GbmParams(0.05, 0.20),
        GbmParams(0.02, 0.10),
        GbmParams(0.02, 0.20),
    )
)


@dataclass(frozen=True)
class SampledSeries:
    """Values ``S_1..S_m`` on the grid ``t_i = i/m``; ``S_0 = 1`` is implicit."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size < 2:
            raise ValueError("a series needs at least 2 values")
        if np.any(values <= 0):
            raise ValueError("GBM values must be positive")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.m + 1) / self.m


def gbm_paths(p: GbmParams, m: int, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Exact lognormal stepping of ``n_paths`` paths; returns shape ``(n_paths, m)``.

    Row ``i`` column ``j`` holds ``S_{j+1}`` of path ``i``.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    dt = 1.0 / m
    z = rng.standard_normal((n_paths, m))
    log_inc = (p.mu - 0.5 * p.sigma**2) * dt + p.sigma * np.sqrt(dt) * z
    return np.exp(np.cumsum(log_inc, axis=1))


def gbm_path(p: GbmParams, m: int, rng: np.random.Generator) -> SampledSeries:
    return SampledSeries(gbm_paths(p, m, 1, rng)[0])


def time_augment(s: SampledSeries, include_t0: bool = False) -> PiecewisePath:
    """Two-dimensional path ``(t_i, S_i)`` with time as the first coordinate.

    The grid starts at ``1/m``; ``include_t0`` prepends the point ``(0, 1)``.
    """
    times = s.times
    values = s.values
    if include_t0:
        times = np.concatenate([[0.0], times])
        values = np.concatenate([[1.0], values])
    return PiecewisePath(times, np.column_stack([times, values]))


def _knots(points) -> tuple[np.ndarray, np.ndarray]:
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("need at least 2 points")
    times = np.array([p[0] for p in pts], dtype=float)
    values = np.array([p[1] for p in pts], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return times, values


def linear_interpolate(points: Sequence[tuple[float, object]]) -> PiecewisePath:
    """Piecewise-linear path through ``(t_i, x_i)``; call it to evaluate."""
    times, values = _knots(points)
    return PiecewisePath(times, values)


@dataclass(frozen=True)
class RectilinearPath:
    """Step path holding ``x_i`` on ``[t_i, t_{i+1})`` and ``x_n`` at ``t_n``."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t: float):
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[i]


def rectilinear_interpolate(points: Sequence[tuple[float, object]]) -> RectilinearPath:
    times, values = _knots(points)
    return RectilinearPath(times, values)


def signatures_from_paths(values: np.ndarray, depth: int, scale: bool, include_t0: bool = False) -> np.ndarray:
    """Flattened signatures of time-augmented series, one row per series.

    ``values`` has shape ``(n_paths, m)`` holding ``S_1..S_m`` on the grid
    ``i/m``. With ``scale`` set, level ``k`` is multiplied by ``k!``.
    """
    values = np.asarray(values, dtype=float)
    n_paths, m = values.shape
    times = np.arange(1, m + 1) / m
    if include_t0:
        times = np.concatenate([[0.0], times])
        values = np.hstack([np.ones((n_paths, 1)), values])
    path = np.stack([np.broadcast_to(times, values.shape), values], axis=-1)
    levels = batch_signature(np.diff(path, axis=1), depth)
    if scale:
        for k in range(2, depth + 1):
            levels[k] = levels[k] * math.factorial(k)
    return np.concatenate(levels[1:], axis=1)


def regime_point(
    p: GbmParams,
    n_paths: int,
    depth: int,
    m: int,
    scale: bool,
    rng: np.random.Generator,
    include_t0: bool = False,
) -> RegimePoint:
    """Simulate ``n_paths`` GBM paths, time-augment them and collect their
    (optionally ``k!``-scaled) truncated signatures."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    vectors = signatures_from_paths(gbm_paths(p, m, n_paths, rng), depth, scale, include_t0)
    assert vectors.shape == (n_paths, term_counts(2, depth)[0])
    return RegimePoint(vectors)


def write_paths_csv(paths: np.ndarray, out_path: str | Path) -> None:
    """Write simulated series as ``path_id,t,value`` rows, one per knot."""
    paths = np.asarray(paths, dtype=float)
    m = paths.shape[1]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t", "value"])
        for pid, row in enumerate(paths):
            for i, v in enumerate(row, start=1):
                writer.writerow([pid, repr(i / m), repr(float(v))])
