"""Posterior predictive densities, grids and candidate sequences.

The predictive law of a new sequence's parameters is the Dirichlet-process
predictive: join cluster c of a retained sample with probability
n_c / (n + alpha0) or take a fresh draw from the centering law with
probability alpha0 / (n + alpha0). Densities are Monte Carlo averages of
the sine-model likelihood over ``draw_count`` such draws, with draw k
taken from retained sample k mod (number of samples).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .dataset import AngleSequence
from .sampler import PosteriorSample, _log_norms, _check_prior, draw_centering
from .torus import (TWO_PI, grid_centers, log_sine_norm_constants, sample_sine_arrays,
                    sine_log_kernel)

DEFAULT_RESOLUTION = 360
GRID_TOLERANCE = 0.02


@dataclass(frozen=True)
class PredictiveModel:
    """A fitted model ready for prediction at a target presence mask.

    ``n`` is the number of sequences the samples were fitted to; ``n = 0``
    with no samples is the degenerate prior-only model.
    """

    samples: tuple
    n: int
    alpha0: float
    prior: object
    mask: np.ndarray
    residue_classes: tuple

    def __post_init__(self):
        _check_prior(self.prior)
        samples = tuple(self.samples)
        if self.n > 0 and not samples:
            raise ValueError("a fitted predictive model needs at least one retained sample")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        mask = np.array(self.mask, dtype=bool)
        mask.flags.writeable = False
        if len(self.residue_classes) != len(mask):
            raise ValueError("need one residue class per position")
        for s in samples:
            if not isinstance(s, PosteriorSample):
                raise TypeError("samples must be PosteriorSample objects")
            if s.state.means.shape[1] != len(mask) or len(s.state.labels) != self.n:
                raise ValueError("sample shape does not match the model's n and m")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "residue_classes", tuple(self.residue_classes))

    @property
    def m(self) -> int:
        return len(self.mask)

    @property
    def default_draw_count(self) -> int:
        return max(len(self.samples), 1)


@dataclass(frozen=True)
class PredictiveDraws:
    """Parameter sequences theta_{n+1}: means (B, m, 2), omegas (B, m, 3)."""

    means: np.ndarray
    omegas: np.ndarray
    states: np.ndarray | None
    sample_index: np.ndarray
    fresh: np.ndarray

    def __len__(self):
        return len(self.means)

    def permuted(self, order) -> "PredictiveDraws":
        order = np.asarray(order)
        return PredictiveDraws(self.means[order], self.omegas[order],
                               None if self.states is None else self.states[order],
                               self.sample_index[order], self.fresh[order])


def predictive_draws(model: PredictiveModel, draw_count: int | None, rng: np.random.Generator) -> PredictiveDraws:
    """``draw_count`` predictive parameter draws, cycling over retained samples."""
    b = model.default_draw_count if draw_count is None else int(draw_count)
    if b < 1:
        raise ValueError("draw_count must be at least 1")
    m = model.m
    u = rng.random(b)
    means = np.empty((b, m, 2))
    omegas = np.empty((b, m, 3))
    with_states = model.prior.uses_states
    states = np.empty((b, m), dtype=np.int64) if with_states else None
    fresh = np.ones(b, dtype=bool)
    idx = np.zeros(b, dtype=np.int64)
    if model.samples:
        n_s = len(model.samples)
        idx = np.arange(b) % n_s
        total = model.n + model.alpha0
        for s_i, sample in enumerate(model.samples):
            rows = np.flatnonzero(idx == s_i)
            if not len(rows):
                continue
            st = sample.state
            cum = np.cumsum(st.sizes) / total
            c = np.searchsorted(cum, u[rows], side="right")
            old = c < st.n_clusters
            hit, c = rows[old], c[old]
            fresh[hit] = False
            means[hit] = st.means[c]
            omegas[hit] = st.omegas[c]
            if with_states:
                states[hit] = st.states[c]
    k = int(fresh.sum())
    if k:
        f_means, f_omegas, f_states = draw_centering(model.prior, k, m, rng, model.residue_classes)
        means[fresh] = f_means
        omegas[fresh] = f_omegas
        if with_states:
            states[fresh] = f_states
    return PredictiveDraws(means, omegas, states, idx, fresh)


def posterior_predictive_draw(sample: PosteriorSample | None, model: PredictiveModel,
                              rng: np.random.Generator):
    """One theta_{n+1} from a single retained sample: (means (m, 2), omegas (m, 3), states)."""
    sub = model if sample is None else PredictiveModel((sample,), model.n, model.alpha0, model.prior,
                                                       model.mask, model.residue_classes)
    d = predictive_draws(sub, 1, rng)
    return d.means[0], d.omegas[0], None if d.states is None else d.states[0]


def _positions(x: AngleSequence, model: PredictiveModel) -> np.ndarray:
    if len(x) != model.m:
        raise ValueError(f"target has {len(x)} positions, model has {model.m}")
    extra = x.present & ~model.mask
    if extra.any():
        raise ValueError(f"target positions {np.flatnonzero(extra).tolist()} are outside the model mask")
    return np.flatnonzero(x.present)


def joint_log_terms(x: AngleSequence, model: PredictiveModel, draws: PredictiveDraws) -> np.ndarray:
    """log f(x | theta_k) for every draw, over the target's present positions."""
    j = _positions(x, model)
    if len(j) == 0:
        return np.zeros(len(draws))
    om = draws.omegas[:, j]
    mu = draws.means[:, j]
    vals = _log_norms(om) + sine_log_kernel(x.angles[j, 0], x.angles[j, 1], mu[..., 0], mu[..., 1],
                                            om[..., 0], om[..., 2], -om[..., 1])
    return vals.sum(axis=1)


def log_mean_exp(terms) -> float:
    """log of the mean of exp(terms); terms are sorted first so the result does
    not depend on their order."""
    terms = np.sort(np.asarray(terms, dtype=float))
    return float(logsumexp(terms) - math.log(len(terms)))


def estimate_joint_logdensity(x: AngleSequence, model: PredictiveModel, draw_count: int | None = None,
                              rng: np.random.Generator | None = None,
                              draws: PredictiveDraws | None = None) -> float:
    """Monte Carlo log predictive density of a target sequence."""
    if draws is None:
        draws = predictive_draws(model, draw_count, rng if rng is not None else np.random.default_rng())
    return log_mean_exp(joint_log_terms(x, model, draws))


def monte_carlo_se(x: AngleSequence, model: PredictiveModel, draws: PredictiveDraws) -> tuple[float, float]:
    """(estimate, standard error) of the predictive density itself, not its log."""
    terms = joint_log_terms(x, model, draws)
    vals = np.exp(terms)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.inf
    return float(vals.mean()), se


def conditional_logdensity(x_partial: AngleSequence, x_query: AngleSequence, model: PredictiveModel,
                           draw_count: int | None = None, rng: np.random.Generator | None = None,
                           draws: PredictiveDraws | None = None) -> float:
    """log f(x_Q | x_S) = log avg f(x_Q, x_S | theta) - log avg f(x_S | theta) on shared draws."""
    if not x_partial.present.any() or not x_query.present.any():
        raise ValueError("conditioning and query sets must both be nonempty")
    if (x_partial.present & x_query.present).any():
        raise ValueError("conditioning and query positions must be disjoint")
    if draws is None:
        draws = predictive_draws(model, draw_count, rng if rng is not None else np.random.default_rng())
    joint = joint_log_terms(x_partial, model, draws) + joint_log_terms(x_query, model, draws)
    return log_mean_exp(joint) - log_mean_exp(joint_log_terms(x_partial, model, draws))


@dataclass(frozen=True)
class DensityGrid:
    """Log density on the G x G cell centres; axis 0 is phi, axis 1 is psi."""

    position: int
    resolution: int
    log_density: np.ndarray

    def __post_init__(self):
        g = np.array(self.log_density, dtype=float)
        if g.shape != (self.resolution, self.resolution):
            raise ValueError(f"grid must be {self.resolution} x {self.resolution}")
        g.flags.writeable = False
        object.__setattr__(self, "log_density", g)

    @property
    def cell_area(self) -> float:
        return (TWO_PI / self.resolution) ** 2

    def total_mass(self) -> float:
        return float(np.exp(logsumexp(self.log_density)) * self.cell_area)

    def check_normalization(self, tol: float = GRID_TOLERANCE) -> float:
        mass = self.total_mass()
        if abs(mass - 1.0) > tol:
            raise ValueError(f"grid at position {self.position} integrates to {mass:.4f}")
        return mass

    def probabilities(self) -> np.ndarray:
        """Cell masses normalized to sum to 1."""
        return np.exp(self.log_density - logsumexp(self.log_density))


def mixture_log_grid(params: np.ndarray, log_weights, resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Log density of a sine mixture at cell centres; ``params`` rows are (mu, nu, k1, k2, lam)."""
    params = np.asarray(params, dtype=float).reshape(-1, 5)
    logc = log_sine_norm_constants(params[:, 2], params[:, 3], params[:, 4])
    full = np.ascontiguousarray(np.column_stack([params, logc]))
    lw = np.ascontiguousarray(np.broadcast_to(np.asarray(log_weights, dtype=float), (len(params),)))
    return _kernels.sine_mixture_log_grid(full, lw, grid_centers(resolution))


def marginal_grid(position: int, model: PredictiveModel, draw_count: int | None = None,
                  resolution: int = DEFAULT_RESOLUTION, rng: np.random.Generator | None = None,
                  draws: PredictiveDraws | None = None) -> DensityGrid:
    """Predictive density of the angle pair at one position, on a grid."""
    if not 0 <= position < model.m:
        raise IndexError(f"position {position} out of range")
    if not model.mask[position]:
        raise ValueError(f"position {position} is not in the target mask")
    if draws is None:
        draws = predictive_draws(model, draw_count, rng if rng is not None else np.random.default_rng())
    mu = draws.means[:, position]
    om = draws.omegas[:, position]
    params = np.column_stack([mu[:, 0], mu[:, 1], om[:, 0], om[:, 2], -om[:, 1]])
    grid = mixture_log_grid(params, -math.log(len(draws)), resolution)
    return DensityGrid(position, resolution, grid)


def candidate_array(model: PredictiveModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """(count, m, 2) candidate angles, NaN outside the target mask."""
    draws = predictive_draws(model, count, rng)
    j = np.flatnonzero(model.mask)
    out = np.full((count, model.m, 2), np.nan)
    mu = draws.means[:, j]
    om = draws.omegas[:, j]
    out[:, j] = sample_sine_arrays(mu[..., 0], mu[..., 1], om[..., 0], om[..., 2], -om[..., 1], rng)
    return out


def sample_candidate_sequences(model: PredictiveModel, count: int, rng: np.random.Generator) -> list:
    """Candidate sequences: one predictive draw each, then one angle pair per masked position."""
    arr = candidate_array(model, count, rng)
    return [AngleSequence(a, model.mask) for a in arr]


__all__ = [
    "DensityGrid",
    "PredictiveDraws",
    "PredictiveModel",
    "candidate_array",
    "conditional_logdensity",
    "estimate_joint_logdensity",
    "joint_log_terms",
    "log_mean_exp",
    "marginal_grid",
    "mixture_log_grid",
    "monte_carlo_se",
    "posterior_predictive_draw",
    "predictive_draws",
    "sample_candidate_sequences",
]
