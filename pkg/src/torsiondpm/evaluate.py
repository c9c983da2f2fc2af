"""Bayes factors, angular RMSD scoring and MCMC diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import AngleSequence
from .density import DensityGrid, PredictiveModel, estimate_joint_logdensity
from .torus import angular_diff

KASS_THRESHOLD = 0.5
KASS_CATEGORIES = ("negligible", "substantial_M1", "substantial_M2")
ACCEPTANCE_BAND = (0.35, 0.70)


def kass_category(log10_bf: float) -> str:
    """Substantial evidence needs |log10 B| strictly above 1/2."""
    if log10_bf > KASS_THRESHOLD:
        return "substantial_M1"
    if log10_bf < -KASS_THRESHOLD:
        return "substantial_M2"
    return "negligible"


@dataclass(frozen=True)
class BayesFactorResult:
    log10_bf: float
    model_ids: tuple
    kass_category: str
    log_density_m1: float = math.nan
    log_density_m2: float = math.nan

    def __post_init__(self):
        if self.kass_category != kass_category(self.log10_bf):
            raise ValueError("Kass category disagrees with log10_bf")


def bayes_factor(target: AngleSequence, m1: PredictiveModel, m2: PredictiveModel,
                 draw_count: int | None = None, seed=None,
                 model_ids: tuple = ("M1", "M2")) -> BayesFactorResult:
    """log10 f(target | M1) / f(target | M2).

    Each model's estimate uses its own generator started from the same
    ``seed``, so swapping the models negates the result exactly and the
    same model against itself gives 0.
    """
    f1 = estimate_joint_logdensity(target, m1, draw_count, np.random.default_rng(seed))
    f2 = estimate_joint_logdensity(target, m2, draw_count, np.random.default_rng(seed))
    log10_bf = (f1 - f2) / math.log(10.0)
    return BayesFactorResult(log10_bf, tuple(model_ids), kass_category(log10_bf), f1, f2)


def combined_log10_bf(results) -> float:
    """Independent targets multiply: the combined factor is the sum of log10 values."""
    return float(sum(r.log10_bf for r in results))


def armsd(candidate: AngleSequence, truth: AngleSequence) -> float:
    """Angular RMSD over the 2 * (observed positions) angle coordinates, in radians."""
    if not np.array_equal(candidate.present, truth.present):
        raise ValueError("candidate and truth presence masks differ")
    j = np.flatnonzero(truth.present)
    if len(j) == 0:
        raise ValueError("no observed positions to compare")
    d = angular_diff(candidate.angles[j], truth.angles[j])
    return float(math.sqrt(np.sum(np.square(d)) / (2 * len(j))))


def armsd_many(candidates: np.ndarray, truth: AngleSequence) -> np.ndarray:
    """aRMSD for an array of candidates (count, m, 2) sharing the truth's mask."""
    candidates = np.asarray(candidates, dtype=float)
    j = np.flatnonzero(truth.present)
    if not np.all(np.isfinite(candidates[:, j])):
        raise ValueError("candidates are missing angles at observed truth positions")
    d = angular_diff(candidates[:, j], truth.angles[j])
    return np.sqrt(np.sum(np.square(d), axis=(1, 2)) / (2 * len(j)))


def best_candidate_armsd(candidates, truth: AngleSequence) -> tuple[int, float]:
    """Index and value of the smallest aRMSD; ties go to the lowest index."""
    if len(candidates) == 0:
        raise ValueError("no candidates")
    scores = [armsd(c, truth) for c in candidates]
    best = int(np.argmin(scores))
    return best, float(scores[best])


def clustering_entropy(partition) -> float:
    """-sum_c (n_c / n) ln(n_c / n) for a label vector."""
    labels = np.asarray(partition)
    if labels.ndim != 1 or len(labels) == 0:
        raise ValueError("partition must be a nonempty label vector")
    _, sizes = np.unique(labels, return_counts=True)
    p = sizes / sizes.sum()
    return float(-np.sum(p * np.log(p)))


def cross_chain_grid_distance(g1: DensityGrid, g2: DensityGrid) -> float:
    """Total-variation distance between two normalized density grids."""
    if g1.resolution != g2.resolution:
        raise ValueError("grids have different resolutions")
    if g1.position != g2.position:
        raise ValueError("grids are for different positions")
    return float(min(1.0, 0.5 * np.abs(g1.probabilities() - g2.probabilities()).sum()))


@dataclass(frozen=True)
class DiagnosticsTrace:
    iterations: np.ndarray
    cluster_counts: np.ndarray
    entropies: np.ndarray
    precision_acceptance: float
    means_acceptance: float


def _rate(accepted: int, proposed: int) -> float:
    return accepted / proposed if proposed else math.nan


def diagnostics_report(samples) -> tuple[DiagnosticsTrace, dict]:
    """Cluster-count and entropy traces plus acceptance summaries for one chain."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    trace = DiagnosticsTrace(
        iterations=np.array([s.iteration for s in samples]),
        cluster_counts=np.array([s.n_clusters for s in samples]),
        entropies=np.array([s.entropy for s in samples]),
        precision_acceptance=_rate(sum(s.precision_accepted for s in samples),
                                   sum(s.precision_proposed for s in samples)),
        means_acceptance=_rate(sum(s.means_accepted for s in samples),
                               sum(s.means_proposed for s in samples)),
    )
    lo, hi = ACCEPTANCE_BAND
    summary = {
        "retained": len(samples),
        "mean_clusters": float(trace.cluster_counts.mean()),
        "mean_entropy": float(trace.entropies.mean()),
        "precision_acceptance": trace.precision_acceptance,
        "means_acceptance": trace.means_acceptance,
        "means_acceptance_in_band": bool(lo <= trace.means_acceptance <= hi),
    }
    return trace, summary


__all__ = [
    "BayesFactorResult",
    "DiagnosticsTrace",
    "armsd",
    "armsd_many",
    "bayes_factor",
    "best_candidate_armsd",
    "clustering_entropy",
    "combined_log10_bf",
    "cross_chain_grid_distance",
    "diagnostics_report",
    "kass_category",
]
