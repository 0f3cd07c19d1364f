"""Config-driven experiment runners and report I/O."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics import adjusted_rand_score

from . import __version__
from .market_sim import GbmParams, DEFAULT_REGIMES, gbm_paths, signatures_from_paths, write_paths_csv
from .path_metrics import (
    KernelConfig,
    RegimePoint,
    distance_matrix,
    gaussian_similarity,
    inverse_similarity,
    inverse_square_similarity,
    median_bandwidth,
    xi_heuristic,
)
from .spectral_clustering import ClusteringResult, multiscale_cluster

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ClusteringReport",
    "DEFAULT_CLOUD_CENTRES",
    "run_gaussian_clouds",
    "run_synthetic_regimes",
    "run_generic",
    "run",
    "emit_report",
    "load_report",
]

DEFAULT_CLOUD_CENTRES = ((2.0, 1.0), (3.0, 8.0), (8.0, 2.0), (8.0, 8.0))
EXPERIMENTS = ("clouds", "regimes", "generic")
SIMILARITIES = ("gaussian_eq", "inverse", "inverse_square")

# Stream tags mixed into every SeedSequence so the experiment stages never share draws.
_STREAM_DATA = 0
_STREAM_CLUSTER = 1


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    experiment: str = "regimes"
    T: int = 2000
    restarts: int = 10
    depth: int = 3
    n_paths: int = 40
    m: int = 100
    points_per_regime: int = 10
    regimes: tuple[tuple[float, float], ...] = tuple((p.mu, p.sigma) for p in DEFAULT_REGIMES)
    scale: bool = True
    include_t0: bool = False
    cloud_centres: tuple[tuple[float, float], ...] = DEFAULT_CLOUD_CENTRES
    cloud_sigma: float = 1.0
    cloud_size: int = 100
    similarity: str = "gaussian_eq"
    xi_quantile: float = 0.01
    kernel_bandwidth: str | float = "median"
    input_kind: str = "auto"
    eigengap_k_max: int = 10
    write_paths: bool = False

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(f"similarity must be one of {SIMILARITIES}")
        for name in ("T", "restarts", "depth", "n_paths", "points_per_regime", "cloud_size", "eigengap_k_max"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if isinstance(self.m, bool) or not isinstance(self.m, int) or self.m < 2:
            raise ConfigError("m must be an integer >= 2")
        if not 0 < self.xi_quantile <= 1:
            raise ConfigError("xi_quantile must lie in (0, 1]")
        if not self.cloud_sigma > 0:
            raise ConfigError("cloud_sigma must be positive")
        if self.input_kind not in ("auto", "distances", "coordinates"):
            raise ConfigError("input_kind must be auto, distances or coordinates")
        bw = self.kernel_bandwidth
        if isinstance(bw, str):
            if bw != "median":
                raise ConfigError("kernel_bandwidth must be 'median' or a positive number")
        elif isinstance(bw, bool) or not isinstance(bw, (int, float)) or not bw > 0:
            raise ConfigError("kernel_bandwidth must be 'median' or a positive number")
        try:
            regimes = tuple((float(mu), float(sigma)) for mu, sigma in self.regimes)
            centres = tuple((float(x), float(y)) for x, y in self.cloud_centres)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed regimes or cloud_centres: {exc}") from exc
        if not regimes or not centres:
            raise ConfigError("regimes and cloud_centres must be non-empty")
        if any(sigma <= 0 for _, sigma in regimes):
            raise ConfigError("regime volatilities must be positive")
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "cloud_centres", centres)

    @classmethod
    def from_dict(cls, data: dict[str, Any], **overrides) -> ExperimentConfig:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in data:
            raise ConfigError("config must set a seed")
        for key in ("regimes", "cloud_centres"):
            if key in data:
                data[key] = tuple(_pair(item) for item in data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, **overrides)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["regimes"] = [{"mu": mu, "sigma": sigma} for mu, sigma in self.regimes]
        out["cloud_centres"] = [list(c) for c in self.cloud_centres]
        return out

    def similarity_function(self, xi: float) -> Callable:
        if self.similarity == "gaussian_eq":
            return lambda d: gaussian_similarity(d, xi)
        if self.similarity == "inverse":
            return inverse_similarity
        return inverse_square_similarity


def _pair(item) -> tuple[float, float]:
    if isinstance(item, dict):
        if set(item) != {"mu", "sigma"}:
            raise ConfigError(f"regime entries need exactly mu and sigma, got {sorted(item)}")
        return (item["mu"], item["sigma"])
    if len(item) != 2:
        raise ConfigError(f"expected a pair, got {item!r}")
    return tuple(item)


@dataclass
class ClusteringReport:
    """Suggestions (sorted by separation, largest first) plus a config echo.

    ``eigengap_table[k-2, t-1]`` holds ``Delta_k(t)`` for ``k = 2..k_max``.
    """

    suggestions: list[dict[str, Any]]
    eigengap_table: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def suggestion(self, k: int) -> dict[str, Any] | None:
        for s in self.suggestions:
            if s["k"] == k:
                return s
        return None

    def to_json(self) -> str:
        body = {"suggestions": self.suggestions, "metadata": self.metadata}
        return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def __eq__(self, other):
        if not isinstance(other, ClusteringReport):
            return NotImplemented
        return (
            self.suggestions == other.suggestions
            and self.metadata == other.metadata
            and np.array_equal(self.eigengap_table, other.eigengap_table)
        )


def _json_float(x: float) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def _build_report(
    result: ClusteringResult,
    cfg: ExperimentConfig,
    extra: dict[str, Any],
    true_labels: np.ndarray | None = None,
) -> ClusteringReport:
    suggestions = []
    for s in result.suggestions:
        entry = {
            "k": s.k,
            "separation": float(s.separation),
            "t_revealing": s.t,
            "trivial": s.trivial,
            "objective": _json_float(s.objective),
            "assignment": [int(x) for x in s.labels],
        }
        if true_labels is not None:
            with warnings.catch_warnings():
                # sklearn warns when a partition has many classes (e.g. all singletons).
                warnings.simplefilter("ignore", UserWarning)
                entry["ari"] = float(adjusted_rand_score(true_labels, s.labels))
        suggestions.append(entry)
    profile = result.profile
    k_max = min(cfg.eigengap_k_max, profile.k_max)
    table = profile.gaps[1:k_max].copy()
    metadata = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
        "n_points": int(result.spectrum.n),
        "eigenvalues": [float(x) for x in result.spectrum.eigenvalues[: cfg.eigengap_k_max + 1]],
        "local_maxima": list(profile.local_maxima),
        **extra,
    }
    if true_labels is not None:
        metadata["true_labels"] = [int(x) for x in true_labels]
    return ClusteringReport(suggestions, table, metadata)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _cluster(distances: np.ndarray, cfg: ExperimentConfig) -> tuple[ClusteringResult, float]:
    xi = xi_heuristic(distances, cfg.xi_quantile)
    result = multiscale_cluster(
        distances,
        cfg.similarity_function(xi),
        T=cfg.T,
        restarts=cfg.restarts,
        rng=_rng(cfg.seed, _STREAM_CLUSTER),
    )
    return result, xi


def sample_clouds(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian clouds around ``cfg.cloud_centres``; returns ``(points, labels)``."""
    rng = _rng(cfg.seed, _STREAM_DATA)
    centres = np.asarray(cfg.cloud_centres)
    points = np.vstack([c + cfg.cloud_sigma * rng.standard_normal((cfg.cloud_size, 2)) for c in centres])
    labels = np.repeat(np.arange(len(centres)), cfg.cloud_size)
    return points, labels


def run_gaussian_clouds(cfg: ExperimentConfig) -> ClusteringReport:
    if cfg.experiment != "clouds":
        raise ConfigError("run_gaussian_clouds needs experiment='clouds'")
    points, labels = sample_clouds(cfg)
    result, xi = _cluster(cdist(points, points), cfg)
    extra = {"xi": xi, "points": points.tolist()}
    return _build_report(result, cfg, extra, labels)


def _regime_paths(cfg: ExperimentConfig, regime: int, point: int) -> np.ndarray:
    mu, sigma = cfg.regimes[regime]
    return gbm_paths(GbmParams(mu, sigma), cfg.m, cfg.n_paths, _rng(cfg.seed, _STREAM_DATA, regime, point))


def generate_regime_points(cfg: ExperimentConfig, workers: int = 1) -> tuple[list[RegimePoint], np.ndarray]:
    """One :class:`RegimePoint` per (regime, repetition), regime-major order.

    Each point draws from its own stream keyed by ``(seed, regime, point)``, so
    the result does not depend on ``workers``.
    """
    keys = [(r, i) for r in range(len(cfg.regimes)) for i in range(cfg.points_per_regime)]

    def make(key):
        paths = _regime_paths(cfg, *key)
        return RegimePoint(signatures_from_paths(paths, cfg.depth, cfg.scale, cfg.include_t0))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            points = list(pool.map(make, keys))
    else:
        points = [make(k) for k in keys]
    labels = np.array([r for r, _ in keys])
    return points, labels


def run_synthetic_regimes(cfg: ExperimentConfig, workers: int = 1) -> ClusteringReport:
    if cfg.experiment != "regimes":
        raise ConfigError("run_synthetic_regimes needs experiment='regimes'")
    points, labels = generate_regime_points(cfg, workers)
    if cfg.kernel_bandwidth == "median":
        kernel = median_bandwidth(np.vstack([p.signatures for p in points]))
    else:
        kernel = KernelConfig(float(cfg.kernel_bandwidth))
    distances = distance_matrix(points, kernel)
    result, xi = _cluster(distances, cfg)
    extra = {"xi": xi, "kernel_bandwidth": kernel.bandwidth}
    return _build_report(result, cfg, extra, labels)


def read_matrix_csv(text: str) -> np.ndarray:
    """Numeric table from CSV text; a non-numeric first row is taken as a header."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError("empty CSV")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        table = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"malformed CSV: {exc}") from exc
    if table.ndim != 2 or table.shape[0] < 2:
        raise ValueError("CSV must hold a table with at least 2 rows of equal length")
    return table


def _looks_like_distances(table: np.ndarray) -> bool:
    return (
        table.shape[0] == table.shape[1]
        and np.all(np.diag(table) == 0)
        and np.allclose(table, table.T, rtol=0.0, atol=1e-12)
        and np.all(table >= 0)
    )


def run_generic(cfg: ExperimentConfig, input_csv: str | Path) -> ClusteringReport:
    """Cluster a user-supplied distance matrix or coordinate table."""
    if cfg.experiment != "generic":
        raise ConfigError("run_generic needs experiment='generic'")
    raw = Path(input_csv).read_bytes()
    table = read_matrix_csv(raw.decode())
    kind = cfg.input_kind
    if kind == "auto":
        kind = "distances" if _looks_like_distances(table) else "coordinates"
    if kind == "distances":
        if table.shape[0] != table.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(table, table.T, rtol=0.0, atol=1e-12):
            raise ValueError("distance matrix must be symmetric")
        distances = table
    else:
        distances = cdist(table, table)
    result, xi = _cluster(distances, cfg)
    extra = {"xi": xi, "input_kind": kind, "input_sha256": hashlib.sha256(raw).hexdigest()}
    return _build_report(result, cfg, extra)


def run(cfg: ExperimentConfig, input_csv: str | Path | None = None, workers: int = 1) -> ClusteringReport:
    if cfg.experiment == "clouds":
        return run_gaussian_clouds(cfg)
    if cfg.experiment == "regimes":
        return run_synthetic_regimes(cfg, workers)
    if input_csv is None:
        raise ConfigError("the generic experiment needs an input CSV")
    return run_generic(cfg, input_csv)


def emit_report(report: ClusteringReport, out_dir: str | Path) -> list[Path]:
    """Write ``report.json``, ``eigengaps.csv`` and ``assignments.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "eigengaps.csv", out / "assignments.csv"]
    paths[0].write_text(report.to_json())
    with open(paths[1], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "k", "delta"])
        table = report.eigengap_table
        for t in range(table.shape[1]):
            for row in range(table.shape[0]):
                writer.writerow([t + 1, row + 2, repr(float(table[row, t]))])
    with open(paths[2], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_id", "k", "label"])
        for s in report.suggestions:
            for pid, label in enumerate(s["assignment"]):
                writer.writerow([pid, s["k"], label])
    return paths


def write_experiment_paths(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Dump every simulated series of a regimes run to ``paths.csv``."""
    all_paths = np.vstack(
        [_regime_paths(cfg, r, i) for r in range(len(cfg.regimes)) for i in range(cfg.points_per_regime)]
    )
    target = Path(out_dir) / "paths.csv"
    write_paths_csv(all_paths, target)
    return target


def load_report(out_dir: str | Path) -> ClusteringReport:
    """Inverse of :func:`emit_report` for ``report.json`` plus ``eigengaps.csv``."""
    out = Path(out_dir)
    body = json.loads((out / "report.json").read_text())
    with open(out / "eigengaps.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        T = max(int(r["t"]) for r in rows)
        k_max = max(int(r["k"]) for r in rows)
        table = np.zeros((k_max - 1, T))
        for r in rows:
            table[int(r["k"]) - 2, int(r["t"]) - 1] = float(r["delta"])
    else:
        table = np.zeros((0, body["metadata"]["config"]["T"]))
    return ClusteringReport(body["suggestions"], table, body["metadata"])
