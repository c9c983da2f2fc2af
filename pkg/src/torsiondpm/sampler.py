"""Dirichlet-process mixture of sine models over aligned angle-pair sequences.

Each cluster carries, for every alignment position j, a mean pair
(mu_j, nu_j) and a 2x2 precision Omega_j; under the HMM prior it also
carries a hidden secondary-structure state chain. One MCMC iteration runs

    (a) an auxiliary-variable Gibbs scan over cluster assignments
        (Neal's Algorithm 8 with one auxiliary component),
    (b) independence MH updates of the precisions,
    (c) forward-filtering backward-sampling of the state chains (HMM only),
    (d) independence MH updates of the means,

in that order. Absent cells (a_ij = 0) contribute nothing anywhere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import AlignmentDataset, AngleSequence
from .priors.centering import LOG_FLAT, HMMPrior, NoninformativePrior
from .priors.conjugate import (N_STATS, batch_full_conditionals, batch_mixture_log_density,
                               data_log_kernel, pad_mixtures)
from .priors.hmm import RESIDUE_CLASSES, STATES, fb_sample_states_from_emissions
from .priors.wishart import wishart_logdensity_arrays, wishart_sample_many
from .torus import angular_diff, log_sine_norm_constants, sine_log_kernel

log = logging.getLogger(__name__)

INIT_MODES = ("single-cluster", "singletons")
PRIOR_MODES = ("hmm", "noninformative")
# Share of precision proposals drawn from the prior Wishart instead of the
# normal-approximation Wishart. The approximation has light tails where
# residuals are large; the prior component keeps the importance weights bounded.
DEFENSIVE_SHARE = 0.05


class SamplerError(RuntimeError):
    """A sub-update failed; the message names the iteration."""


@dataclass(frozen=True)
class McmcConfig:
    alpha0: float = 1.0
    iterations: int = 11_000
    burnin: int = 1_000
    thin: int = 20
    init_mode: str = "single-cluster"
    prior_mode: str = "hmm"
    seed: int | None = None

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("need 0 <= burnin < iterations")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")

    @property
    def retained_count(self) -> int:
        return (self.iterations - self.burnin) // self.thin

    def is_retained(self, iteration: int) -> bool:
        return iteration > self.burnin and (iteration - self.burnin) % self.thin == 0


def _readonly(arr, dtype=float):
    arr = np.array(arr, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClusterState:
    """Partition plus per-cluster, per-position parameters.

    ``labels`` (n,) holds cluster indices 0..K-1, ``means`` is (K, m, 2),
    ``omegas`` (K, m, 3) stores (omega11, omega12, omega22) and ``states``
    (K, m) the HMM state indices, or None under the noninformative prior.
    """

    labels: np.ndarray
    means: np.ndarray
    omegas: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        labels = _readonly(self.labels, np.int64)
        means = _readonly(self.means)
        omegas = _readonly(self.omegas)
        k = means.shape[0]
        if means.ndim != 3 or means.shape[2] != 2 or omegas.shape != means.shape[:2] + (3,):
            raise ValueError("means must be (K, m, 2) and omegas (K, m, 3)")
        if labels.ndim != 1 or np.any(np.bincount(labels, minlength=k)[:k] == 0) or labels.max() >= k \
                or labels.min() < 0:
            raise ValueError("labels must use every cluster index 0..K-1")
        det = omegas[..., 0] * omegas[..., 2] - omegas[..., 1] ** 2
        if not (np.all(omegas[..., 0] > 0) and np.all(det > 0)):
            raise ValueError("every precision matrix must be positive definite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "omegas", omegas)
        if self.states is not None:
            states = _readonly(self.states, np.int64)
            if states.shape != means.shape[:2] or states.min() < 0 or states.max() > 3:
                raise ValueError("states must be (K, m) indices into H, E, T, C")
            object.__setattr__(self, "states", states)

    @property
    def n_clusters(self) -> int:
        return self.means.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def cluster_params(self, c: int):
        """(means (m, 2), omegas (m, 3)) of cluster ``c``."""
        return self.means[c], self.omegas[c]

    def state_labels(self, c: int) -> str:
        if self.states is None:
            raise ValueError("no hidden states under the noninformative prior")
        return "".join(STATES[s] for s in self.states[c])


@dataclass(frozen=True)
class PosteriorSample:
    """A retained snapshot. Acceptance counts cover the iterations since the
    previous retained sample (or since burn-in ended)."""

    iteration: int
    state: ClusterState
    n_clusters: int
    entropy: float
    precision_accepted: int = 0
    precision_proposed: int = 0
    means_accepted: int = 0
    means_proposed: int = 0


# ---------------------------------------------------------------- likelihoods

@dataclass(frozen=True)
class _Cells:
    """Present cells of a dataset in (sequence, position) order."""

    seq: np.ndarray
    pos: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    starts: np.ndarray  # first cell of each sequence
    trig: np.ndarray = field(repr=False)  # cos phi, sin phi, cos psi, sin psi

    @classmethod
    def from_dataset(cls, data: AlignmentDataset) -> "_Cells":
        seq, pos = np.nonzero(data.present)
        phi = data.angles[seq, pos, 0]
        psi = data.angles[seq, pos, 1]
        starts = np.searchsorted(seq, np.arange(data.n))
        trig = np.stack([np.cos(phi), np.sin(phi), np.cos(psi), np.sin(psi)])
        return cls(seq, pos, phi, psi, starts, trig)


def _cells(data: AlignmentDataset) -> _Cells:
    cached = data.__dict__.get("_cells")
    if cached is None:
        cached = _Cells.from_dataset(data)
        object.__setattr__(data, "_cells", cached)
    return cached


def _log_norms(omegas: np.ndarray) -> np.ndarray:
    return log_sine_norm_constants(omegas[..., 0], omegas[..., 2], -omegas[..., 1])


def sequence_log_likelihood(x: AngleSequence, means, omegas) -> float:
    """sum_j a_j log f(x_j | mu_j, nu_j, Omega_j); absent positions add nothing."""
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    omegas = np.asarray(omegas, dtype=float).reshape(-1, 3)
    if len(means) != len(x) or len(omegas) != len(x):
        raise ValueError("parameters must cover every position")
    j = np.flatnonzero(x.present)
    if len(j) == 0:
        return 0.0
    om = omegas[j]
    vals = _log_norms(om) + sine_log_kernel(x.angles[j, 0], x.angles[j, 1], means[j, 0], means[j, 1],
                                            om[:, 0], om[:, 2], -om[:, 1])
    return float(np.sum(vals))


def _loglik_matrix(cells: _Cells, means, omegas, log_norms) -> np.ndarray:
    """(n, C): log-likelihood of every sequence under every parameter set."""
    p = cells.pos
    vals = log_norms[:, p] + sine_log_kernel(cells.phi, cells.psi, means[:, p, 0], means[:, p, 1],
                                             omegas[:, p, 0], omegas[:, p, 2], -omegas[:, p, 1])
    return np.add.reduceat(vals, cells.starts, axis=1).T


# ---------------------------------------------------------------- centering draws

def _check_prior(prior, config: McmcConfig | None = None):
    if not isinstance(prior, (HMMPrior, NoninformativePrior)):
        raise TypeError("prior must be an HMMPrior or a NoninformativePrior")
    if config is not None and (config.prior_mode == "hmm") != prior.uses_states:
        raise ValueError(f"prior_mode {config.prior_mode!r} does not match a {type(prior).__name__}")


def draw_centering(prior, count: int, m: int, rng: np.random.Generator, residue_classes=None):
    """``count`` fresh parameter sequences from H1 H2: (means, omegas, states)."""
    means, states = prior.draw_means(count, m, rng, residue_classes)
    w = wishart_sample_many(np.full(count * m, prior.wishart.dof),
                            np.broadcast_to(prior.wishart.b, (count * m, 2, 2)), rng)
    omegas = np.stack([w[:, 0, 0], w[:, 0, 1], w[:, 1, 1]], axis=1).reshape(count, m, 3)
    return means, omegas, states


def init_chain(data: AlignmentDataset, config: McmcConfig, prior, rng: np.random.Generator) -> ClusterState:
    """One cluster for everything, or every sequence on its own; parameters from H1 H2."""
    _check_prior(prior, config)
    if config.init_mode == "single-cluster":
        labels = np.zeros(data.n, dtype=np.int64)
    else:
        labels = np.arange(data.n)
    k = int(labels.max()) + 1
    means, omegas, states = draw_centering(prior, k, data.m, rng, data.residue_classes)
    return ClusterState(labels, means, omegas, states)


# ---------------------------------------------------------------- (a) assignments

def reassignment_probabilities(i: int, labels: np.ndarray, counts: np.ndarray,
                               loglik_row: np.ndarray, aux_col: int, alpha0: float) -> np.ndarray:
    """Algorithm 8 (one auxiliary) probabilities for item ``i`` over parameter columns.

    ``labels`` maps items to columns, ``counts`` are column occupancies
    including ``i`` and ``loglik_row`` holds log L_i per column. Existing
    clusters get weight n_c L_i(c) with ``i`` removed; the auxiliary gets
    alpha0 L_i(aux). The auxiliary is column ``aux_col`` (a fresh draw)
    unless ``i`` is a singleton, in which case it keeps its own parameters.
    """
    own = labels[i]
    cnt = counts.astype(float)
    cnt[own] -= 1.0
    aux = own if cnt[own] == 0 else aux_col
    logw = np.full(len(loglik_row), -np.inf)
    occupied = cnt > 0
    logw[occupied] = np.log(cnt[occupied]) + loglik_row[occupied]
    logw[aux] = math.log(alpha0) + loglik_row[aux]
    w = np.exp(logw - logw.max())
    return w / w.sum()


def _relabel(labels: np.ndarray):
    """Canonical labels (clusters numbered by first member) and the source column of each."""
    cols, first = np.unique(labels, return_index=True)
    order = cols[np.argsort(first)]
    remap = np.empty(int(labels.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return remap[labels], order


def aux_gibbs_scan(state: ClusterState, data: AlignmentDataset, config: McmcConfig, prior,
                   rng: np.random.Generator) -> ClusterState:
    """One sweep of the auxiliary Gibbs sampler over all sequences.

    The n auxiliary parameter sets are drawn up front, one per item step;
    item i's draw is used only while i is reassigned (and only if i is not
    a singleton), which matches drawing it on the spot.
    """
    cells = _cells(data)
    n, m = data.n, data.m
    k = state.n_clusters
    f_means, f_omegas, f_states = draw_centering(prior, n, m, rng, data.residue_classes)
    means = np.concatenate([state.means, f_means])
    omegas = np.concatenate([state.omegas, f_omegas])
    states = None if state.states is None else np.concatenate([state.states, f_states])
    ll = _loglik_matrix(cells, means, omegas, _log_norms(omegas))
    labels = state.labels.copy()
    counts = np.bincount(labels, minlength=k + n)
    u = rng.random(n)
    for i in range(n):
        p = reassignment_probabilities(i, labels, counts, ll[i], k + i, config.alpha0)
        cum = np.cumsum(p)
        new = min(int(np.searchsorted(cum, u[i] * cum[-1], side="right")), len(p) - 1)
        while p[new] == 0.0:  # guard against landing on a zero-width slot at the top
            new -= 1
        counts[labels[i]] -= 1
        counts[new] += 1
        labels[i] = new
    labels, cols = _relabel(labels)
    return ClusterState(labels, means[cols], omegas[cols], None if states is None else states[cols])


# ---------------------------------------------------------------- (b) precisions

def _block_index(state: ClusterState, cells: _Cells, m: int) -> np.ndarray:
    return state.labels[cells.seq] * m + cells.pos


def update_precisions(state: ClusterState, data: AlignmentDataset, prior, rng: np.random.Generator):
    """Independence MH for every Omega_j with a Wishart proposal.

    The proposal is the conjugate update of the prior under the normal
    approximation, built from shortest-arc residuals, mixed with a small
    share of prior draws. The target is the Wishart prior times the exact
    sine likelihood. Returns
    (state, accepted, proposed); blocks without data draw exactly from
    the prior and are not counted as proposals.
    """
    cells = _cells(data)
    m = data.m
    k = state.n_clusters
    size = k * m
    blk = _block_index(state, cells, m)
    mu = state.means[state.labels[cells.seq], cells.pos]
    d1 = angular_diff(cells.phi, mu[:, 0])
    d2 = angular_diff(cells.psi, mu[:, 1])

    def total(w):
        return np.bincount(blk, weights=w, minlength=size)

    count = np.bincount(blk, minlength=size).astype(float)
    s11, s12, s22 = total(d1 * d1), total(d1 * d2), total(d2 * d2)
    c1, c2, ss = total(np.cos(d1)), total(np.cos(d2)), total(np.sin(d1) * np.sin(d2))

    wp = prior.wishart
    b = wp.b
    dof = wp.dof + 0.5 * count
    scale = np.empty((size, 2, 2))
    scale[:, 0, 0] = b[0, 0] + 0.5 * s11
    scale[:, 0, 1] = scale[:, 1, 0] = b[0, 1] + 0.5 * s12
    scale[:, 1, 1] = b[1, 1] + 0.5 * s22
    # blocks without data propose from the prior alone, which is then exact
    defensive = (rng.random(size) < DEFENSIVE_SHARE) & (count > 0)
    dof_draw = np.where(defensive, wp.dof, dof)
    scale_draw = np.where(defensive[:, None, None], b, scale)
    draw = wishart_sample_many(dof_draw, scale_draw, rng)
    new = np.stack([draw[:, 0, 0], draw[:, 0, 1], draw[:, 1, 1]], axis=1)
    old = state.omegas.reshape(size, 3)
    u = rng.random(size)
    share = np.where(count > 0, DEFENSIVE_SHARE, 0.0)

    def log_weight(om):
        o11, o12, o22 = om[:, 0], om[:, 1], om[:, 2]
        log_prior = wishart_logdensity_arrays(o11, o12, o22, wp.dof, b)
        target = log_prior + count * _log_norms(om) + o11 * c1 + o22 * c2 - o12 * ss
        approx = wishart_logdensity_arrays(o11, o12, o22, dof, scale)
        with np.errstate(divide="ignore"):
            proposal = np.logaddexp(np.log1p(-share) + approx, np.log(share) + log_prior)
        return target - proposal

    with np.errstate(invalid="ignore", over="ignore"):
        log_r = log_weight(new) - log_weight(old)
        accept = (np.log(u) < log_r) | (count == 0)
    omegas = np.where(accept[:, None], new, old).reshape(k, m, 3)
    # blocks without data are exact prior draws, not Metropolis-Hastings steps
    mh = count > 0
    return (ClusterState(state.labels, state.means, omegas, state.states),
            int(accept[mh].sum()), int(mh.sum()))


# ---------------------------------------------------------------- (c) states

def _log_emissions_all(means: np.ndarray, prior: HMMPrior, residue_classes) -> np.ndarray:
    """(K, m, 4) emission log densities of every cluster's means."""
    classes = np.array(residue_classes)
    out = np.empty(means.shape[:2] + (4,))
    for cls_name in RESIDUE_CLASSES:
        col = classes == cls_name
        if not col.any():
            continue
        table = prior.hmm.emissions.table(cls_name)
        for s, label in enumerate(STATES):
            out[:, col, s] = table[label].log_density(means[:, col, 0], means[:, col, 1])
    return out


def update_states(state: ClusterState, data: AlignmentDataset, prior: HMMPrior,
                  rng: np.random.Generator) -> ClusterState:
    """Redraw each cluster's state chain given its means (the data do not enter)."""
    if not isinstance(prior, HMMPrior):
        raise TypeError("state updates need the HMM prior")
    log_emit = _log_emissions_all(state.means, prior, data.residue_classes)
    states = np.stack([fb_sample_states_from_emissions(le, prior.hmm, rng) for le in log_emit])
    return ClusterState(state.labels, state.means, state.omegas, states)


# ---------------------------------------------------------------- (d) means

@dataclass(frozen=True)
class _MeanPriorTable:
    """Padded prior mixtures for the means, one row per (residue class, state)."""

    params: np.ndarray
    log_wc: np.ndarray
    class_index: np.ndarray  # per position

    @classmethod
    def build(cls, prior, residue_classes) -> "_MeanPriorTable":
        classes = list(residue_classes)
        if isinstance(prior, NoninformativePrior):
            params, log_wc = pad_mixtures([prior.mean_prior()], LOG_FLAT)
            return cls(params, log_wc, np.zeros(len(classes), dtype=np.int64))
        used = sorted(set(classes), key=RESIDUE_CLASSES.index)
        mixtures = [prior.mean_prior(s, c) for c in used for s in range(4)]
        params, log_wc = pad_mixtures(mixtures, LOG_FLAT)
        return cls(params, log_wc, np.array([used.index(c) for c in classes]))

    def rows(self, states: np.ndarray | None, k: int) -> np.ndarray:
        if states is None:
            return np.zeros(k * len(self.class_index), dtype=np.int64)
        return (self.class_index[None, :] * 4 + states).ravel()


def _mean_table(data: AlignmentDataset, prior) -> _MeanPriorTable:
    key = ("_mean_table", id(prior))
    cache = data.__dict__.setdefault("_tables", {})
    if key not in cache:
        cache[key] = (prior, _MeanPriorTable.build(prior, data.residue_classes))
    return cache[key][1]


def mean_block_stats(state: ClusterState, data: AlignmentDataset) -> np.ndarray:
    """(K * m, 9) sufficient statistics of the observations in each cluster block."""
    cells = _cells(data)
    size = state.n_clusters * data.m
    blk = _block_index(state, cells, data.m)
    cp, sp, cq, sq = cells.trig
    cols = [None, cp, sp, cq, sq, cp * cq, cp * sq, sp * cq, sp * sq]
    out = np.empty((size, N_STATS))
    for t, w in enumerate(cols):
        out[:, t] = np.bincount(blk, weights=w, minlength=size)
    return out


def update_means(state: ClusterState, data: AlignmentDataset, prior, rng: np.random.Generator):
    """Independence MH for every (mu_j, nu_j) with the sine-mixture proposal.

    The prior for a block is h1 (noninformative) or the emission mixture of
    the block's current state (HMM). Blocks without observations draw
    straight from the prior and are left out of the returned
    (state, accepted, proposed) counts.
    """
    table = _mean_table(data, prior)
    k, m = state.n_clusters, data.m
    stats = mean_block_stats(state, data)
    om = state.omegas.reshape(k * m, 3)
    k1, k2, lam = om[:, 0], om[:, 2], -om[:, 1]
    rows = table.rows(state.states, k)
    pp, plwc = table.params[rows], table.log_wc[rows]
    proposal = batch_full_conditionals(stats, k1, k2, lam, pp, plwc)
    cand = proposal.sample(rng)
    u = rng.random(k * m)
    cur = state.means.reshape(k * m, 2)

    def log_weight(x):
        target = (batch_mixture_log_density(pp, plwc, x[:, 0], x[:, 1])
                  + data_log_kernel(stats, k1, k2, lam, x[:, 0], x[:, 1]))
        return target - proposal.log_density(x[:, 0], x[:, 1])

    with np.errstate(invalid="ignore", over="ignore"):
        log_r = log_weight(cand) - log_weight(cur)
        accept = (np.log(u) < log_r) | (stats[:, 0] == 0)
    means = np.where(accept[:, None], cand, cur).reshape(k, m, 2)
    mh = stats[:, 0] > 0
    return (ClusterState(state.labels, means, state.omegas, state.states),
            int(accept[mh].sum()), int(mh.sum()))


# ---------------------------------------------------------------- orchestration

def partition_entropy(labels) -> float:
    sizes = np.bincount(np.asarray(labels))
    p = sizes[sizes > 0] / sizes.sum()
    return float(-np.sum(p * np.log(p)))


def run_chain(data: AlignmentDataset, config: McmcConfig, prior,
              rng: np.random.Generator | None = None, progress_every: int = 0) -> list:
    """Run one chain and return its retained PosteriorSamples."""
    _check_prior(prior, config)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init_chain(data, config, prior, rng)
    samples = []
    acc = np.zeros(4, dtype=np.int64)
    for t in range(1, config.iterations + 1):
        step = "assignments"
        try:
            state = aux_gibbs_scan(state, data, config, prior, rng)
            step = "precisions"
            state, pa, pp = update_precisions(state, data, prior, rng)
            if prior.uses_states:
                step = "states"
                state = update_states(state, data, prior, rng)
            step = "means"
            state, ma, mp = update_means(state, data, prior, rng)
        except Exception as exc:
            raise SamplerError(f"iteration {t}, {step} update: {exc}") from exc
        if t > config.burnin:
            acc += (pa, pp, ma, mp)
        if config.is_retained(t):
            samples.append(PosteriorSample(t, state, state.n_clusters, partition_entropy(state.labels),
                                           *map(int, acc)))
            acc[:] = 0
        if progress_every and t % progress_every == 0:
            log.info("iteration %d: %d clusters", t, state.n_clusters)
    return samples


def expected_clusters_prior(alpha0: float, n: int) -> float:
    """Prior mean number of clusters among n items, sum_i alpha0 / (alpha0 + i - 1)."""
    if not alpha0 > 0:
        raise ValueError("alpha0 must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    i = np.arange(n)
    return float(np.sum(alpha0 / (alpha0 + i)))


__all__ = [
    "ClusterState",
    "McmcConfig",
    "PosteriorSample",
    "SamplerError",
    "aux_gibbs_scan",
    "draw_centering",
    "expected_clusters_prior",
    "init_chain",
    "mean_block_stats",
    "partition_entropy",
    "reassignment_probabilities",
    "run_chain",
    "sequence_log_likelihood",
    "update_means",
    "update_precisions",
    "update_states",
]
