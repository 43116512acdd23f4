"""Reconstruction similarity and the parametric-analysis metrics.

Similarity between a signal and its reconstruction is the peak of their
normalized cross-correlation over all integer lags, so it ignores sign,
scale and alignment.  Distributions of similarity values across a training
set are compared through the coefficient of variation, the two-sample
Kolmogorov-Smirnov distance, and a confidence-bound margin derived from the
Dvoretzky-Kiefer-Wolfowitz inequality.  ``parameter_sweep`` wires these into
a grid evaluation harness for the dictionary learners.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dictionary_learning import LEARNERS, TrainConfig


@dataclass(frozen=True)
class Ecdf:
    """Empirical CDF over a sorted sample vector."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64))
        if v.size < 1:
            raise ValueError("an ECDF needs at least one sample")
        object.__setattr__(self, "values", v)

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    def __call__(self, v):
        """Fraction of samples <= v (scalar or array)."""
        return np.searchsorted(self.values, v, side="right") / self.values.size


@dataclass
class SweepRecord:
    """Metrics for one grid point of a parameter sweep."""

    algorithm: str
    config: TrainConfig
    cv: float
    ks_distance: float
    dkw_metric: float
    mean_similarity: float
    wall_time_s: float
    failed: bool = False
    error: str | None = None


def similarity(y, y_hat) -> float:
    """Peak absolute normalized cross-correlation over all lags, in [0, 1]."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError("signals must be 1-D and of equal length")
    e1 = float(y @ y)
    e2 = float(y_hat @ y_hat)
    if e1 == 0.0 or e2 == 0.0:
        raise ValueError("zero-energy signal")
    r = np.correlate(y, y_hat, mode="full")
    return min(float(np.abs(r).max() / math.sqrt(e1 * e2)), 1.0)


def similarity_samples(Y, Y_hat) -> np.ndarray:
    """Column-wise similarity values of a signal matrix and its reconstruction."""
    Y = np.asarray(Y, dtype=np.float64)
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    if Y.shape != Y_hat.shape:
        raise ValueError("matrices must have matching shapes")
    return np.array([similarity(Y[:, i], Y_hat[:, i]) for i in range(Y.shape[1])])


def similarity_epdf(Y, Y_hat, n_bins: int) -> np.ndarray:
    """Normalized histogram of column similarities on [0, 1]; mass sums to 1."""
    s = similarity_samples(Y, Y_hat)
    counts, _ = np.histogram(s, bins=n_bins, range=(0.0, 1.0))
    return counts / s.size


def coeff_variation(samples) -> float:
    """Population standard deviation divided by the mean."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        raise ValueError("need at least two samples")
    mu = float(s.mean())
    if mu == 0.0:
        raise ValueError("mean is zero")
    return float(s.std() / mu)


def ks_distance(f: Ecdf, g: Ecdf) -> float:
    """Two-sample Kolmogorov-Smirnov distance (sup gap on the merged grid)."""
    grid = np.union1d(f.values, g.values)
    return float(np.abs(f(grid) - g(grid)).max())


def dkw_bound(n_samples: int, alpha: float) -> float:
    """Largest two-ECDF distance consistent with a common source at level alpha."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    return math.sqrt(-(2.0 / n_samples) * math.log(alpha / 2.0))


def dkw_metric(f: Ecdf, g: Ecdf, alpha: float) -> float:
    """Confidence bound minus observed KS distance; positive retains the null.

    Both ECDFs must hold the same number of samples, since the bound adds two
    equal-size single-sample bounds.
    """
    if f.n_samples != g.n_samples:
        raise ValueError("ECDFs must have equal sample counts")
    return dkw_bound(f.n_samples, alpha) - ks_distance(f, g)


def _similarity_run(algorithm: str, cfg: TrainConfig, Y) -> tuple[np.ndarray, float]:
    learner = LEARNERS[algorithm]
    dictionary, codes, report = learner(Y, cfg)
    Y_hat = dictionary.atoms @ codes
    energies = np.einsum("ij,ij->j", Y_hat, Y_hat)
    keep = (energies > 0) & (np.einsum("ij,ij->j", Y, Y) > 0)
    if not keep.any():
        raise ValueError("no reconstructed columns with energy")
    samples = similarity_samples(Y[:, keep], Y_hat[:, keep])
    return samples, report.wall_time


def parameter_sweep(algorithm: str, grid, reference: TrainConfig, Y, alpha: float,
                    jobs: int = 1) -> list[SweepRecord]:
    """Train at every grid point and score it against a fixed reference run.

    The learner is first trained at ``reference`` to pin the reference
    similarity distribution.  Each grid point then contributes one record
    with the coefficient of variation of its similarity samples, the KS
    distance and confidence margin against the reference, the mean
    similarity, and the training wall time.  A failing grid point yields a
    flagged record instead of aborting the sweep; records keep grid order.
    """
    if algorithm not in LEARNERS:
        raise ValueError(f"unknown learner {algorithm!r}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    Y = np.asarray(Y, dtype=np.float64)
    ref_samples, _ = _similarity_run(algorithm, reference, Y)
    ref_ecdf = Ecdf(ref_samples)

    def run_point(cfg: TrainConfig) -> SweepRecord:
        try:
            samples, wall = _similarity_run(algorithm, cfg, Y)
            ecdf = Ecdf(samples)
            return SweepRecord(
                algorithm=algorithm,
                config=cfg,
                cv=coeff_variation(samples),
                ks_distance=ks_distance(ecdf, ref_ecdf),
                dkw_metric=dkw_metric(ecdf, ref_ecdf, alpha)
                if ecdf.n_samples == ref_ecdf.n_samples
                else float("nan"),
                mean_similarity=float(samples.mean()),
                wall_time_s=wall,
            )
        except Exception as exc:  # noqa: BLE001 - sweep must survive bad points
            return SweepRecord(
                algorithm=algorithm, config=cfg, cv=float("nan"),
                ks_distance=float("nan"), dkw_metric=float("nan"),
                mean_similarity=float("nan"), wall_time_s=float("nan"),
                failed=True, error=str(exc),
            )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_point, grid))
    return [run_point(cfg) for cfg in grid]


SWEEP_CSV_FIELDS = (
    "algorithm", "k", "n_t", "k_s", "delta", "n_b", "n_r", "n_u", "chi",
    "lam", "seed", "cv", "ks_distance", "dkw_metric", "mean_similarity",
    "wall_time_s",
)


def write_sweep_csv(records, path) -> None:
    """Dump sweep records as CSV, one row per grid point in grid order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_FIELDS)
        for rec in records:
            cfg = rec.config.canonical()
            writer.writerow(
                [rec.algorithm]
                + [cfg[name] for name in SWEEP_CSV_FIELDS[1:11]]
                + [rec.cv, rec.ks_distance, rec.dkw_metric,
                   rec.mean_similarity, rec.wall_time_s]
            )


def reference_config(n_signals: int, seed: int = 0) -> TrainConfig:
    """Default sweep baseline: a single pass with a small dictionary."""
    return TrainConfig(k=max(8, n_signals // 8), n_t=1, seed=seed)
