"""Conditionally conjugate updates for the (mu, nu) means of one position.

A sine-model prior times sine-model likelihood terms with known
precisions is an eight-parameter bivariate von Mises density in the
means. A mixture prior therefore gives a mixture full conditional, whose
component constants have no closed form. Each component is collapsed to
a five-parameter sine model and the resulting mixture serves as the
proposal of an independence Metropolis-Hastings step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .. import _kernels
from ..torus import (NORM_MAX_TERMS, NORM_REL_TOL, SineModelParams, log_sine_norm_constant,
                     sample_sine_arrays, sine_log_kernel, wrap_angle)
from .mixture import SineMixture

LAMBDA_DENOM_EPS = 1e-8
# proposal concentrations are floored here when the resultant vanishes
KAPPA_FLOOR = 1e-8


@dataclass(frozen=True)
class EightParamPosterior:
    mu_t: float
    nu_t: float
    kappa1_t: float
    kappa2_t: float
    a_t: np.ndarray
    trace_term: float  # sum_i lambda_i cos(phi_i - psi_i), used by the surrogate lambda
    degenerate: bool = False

    def log_kernel(self, mu, nu):
        """Unnormalized log density of the exact eight-parameter form."""
        u = np.subtract(mu, self.mu_t)
        w = np.subtract(nu, self.nu_t)
        cu, su, cw, sw = np.cos(u), np.sin(u), np.cos(w), np.sin(w)
        a = self.a_t
        return (self.kappa1_t * cu + self.kappa2_t * cw
                + a[0, 0] * cu * cw + a[0, 1] * cu * sw + a[1, 0] * su * cw + a[1, 1] * su * sw)

    def log_integral(self) -> float:
        """log of the kernel's integral over the torus (minus log of its constant)."""
        a = self.a_t
        return _kernels.log_eight_param_integral(self.kappa1_t, self.kappa2_t,
                                                 a[0, 0], a[0, 1], a[1, 0], a[1, 1])


def eight_param_posterior(phi, psi, kappa1, kappa2, lam,
                          prior: SineModelParams | None) -> EightParamPosterior:
    """Combine a sine prior (as a pseudo-observation) with sine likelihood terms.

    ``prior=None`` stands for the uniform prior, which contributes nothing.
    Per-point parameters broadcast against ``phi``.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    k1 = np.broadcast_to(np.asarray(kappa1, dtype=float), phi.shape)
    k2 = np.broadcast_to(np.asarray(kappa2, dtype=float), phi.shape)
    lm = np.broadcast_to(np.asarray(lam, dtype=float), phi.shape)
    if prior is not None:
        phi = np.concatenate([[prior.mu], phi])
        psi = np.concatenate([[prior.nu], psi])
        k1 = np.concatenate([[prior.kappa1], k1])
        k2 = np.concatenate([[prior.kappa2], k2])
        lm = np.concatenate([[prior.lam], lm])
    r1 = np.array([np.sum(k1 * np.cos(phi)), np.sum(k1 * np.sin(phi))])
    r2 = np.array([np.sum(k2 * np.cos(psi)), np.sum(k2 * np.sin(psi))])
    kap1 = float(np.hypot(*r1))
    kap2 = float(np.hypot(*r2))
    degenerate = kap1 == 0.0 or kap2 == 0.0
    mu_t = float(math.atan2(r1[1], r1[0])) if kap1 > 0 else 0.0
    nu_t = float(math.atan2(r2[1], r2[0])) if kap2 > 0 else 0.0
    mu_t, nu_t = wrap_angle(mu_t), wrap_angle(nu_t)
    sa, ca = np.sin(phi - mu_t), np.cos(phi - mu_t)
    sb, cb = np.sin(psi - nu_t), np.cos(psi - nu_t)
    a_t = np.array([[np.sum(lm * sa * sb), -np.sum(lm * sa * cb)],
                    [-np.sum(lm * ca * sb), np.sum(lm * ca * cb)]])
    trace_term = float(np.sum(lm * np.cos(phi - psi)))
    return EightParamPosterior(mu_t, nu_t, kap1, kap2, a_t, trace_term, degenerate)


def sine_approx_lambda(posterior: EightParamPosterior) -> float:
    """Surrogate association: match the trace of the interaction matrix.

    lambda~ = sum_i lambda_i cos(phi_i - psi_i) / cos(mu~ - nu~), or 0 when
    the denominator is within 1e-8 of zero.
    """
    denom = math.cos(posterior.mu_t - posterior.nu_t)
    if abs(denom) < LAMBDA_DENOM_EPS:
        return 0.0
    return posterior.trace_term / denom


@dataclass(frozen=True)
class ProposalMixture:
    """Sine mixture with weights p*_k and precomputed log constants."""

    log_weights: np.ndarray
    params: np.ndarray  # (K, 5): mu, nu, kappa1, kappa2, lambda
    log_norms: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def components(self) -> list:
        return [SineModelParams(*row) for row in self.params]

    def log_density(self, mu, nu):
        p = self.params
        mu = np.asarray(mu, dtype=float)[..., None]
        nu = np.asarray(nu, dtype=float)[..., None]
        terms = self.log_weights + self.log_norms + sine_log_kernel(
            mu, nu, p[:, 0], p[:, 1], p[:, 2], p[:, 3], p[:, 4])
        out = logsumexp(terms, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def choose(self, rng: np.random.Generator, size=None):
        return rng.choice(len(self.log_weights), size=size, p=self.weights)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        q = self.params[self.choose(rng, count)]
        return sample_sine_arrays(q[:, 0], q[:, 1], q[:, 2], q[:, 3], q[:, 4], rng)

    @classmethod
    def from_mixture(cls, mixture: SineMixture) -> "ProposalMixture":
        p = np.array([[c.mu, c.nu, c.kappa1, c.kappa2, c.lam] for c in mixture.components])
        with np.errstate(divide="ignore"):
            logw = np.log(np.asarray(mixture.weights))
        logc = np.array([c.log_norm for c in mixture.components])
        return cls(logw, p, logc)

    @classmethod
    def uniform(cls) -> "ProposalMixture":
        p = np.array([[0.0, 0.0, KAPPA_FLOOR, KAPPA_FLOOR, 0.0]])
        return cls(np.zeros(1), p, np.array([log_sine_norm_constant(KAPPA_FLOOR, KAPPA_FLOOR, 0.0)]))


def _safe_log_norms(k1, k2, lam):
    """log C per surrogate; lambda drops to 0 where the series hits its term cap."""
    k1, k2, lam = (np.ascontiguousarray(a, dtype=float) for a in (k1, k2, lam))
    out = _kernels.log_sine_norm_many(k1, k2, lam, NORM_REL_TOL, NORM_MAX_TERMS)
    bad = ~np.isfinite(out)
    if bad.any():
        lam = lam.copy()
        lam[bad] = 0.0
        out[bad] = _kernels.log_sine_norm_many(k1[bad], k2[bad], lam[bad], NORM_REL_TOL,
                                               NORM_MAX_TERMS)
    return out, lam


def _collapse(post: EightParamPosterior):
    k1 = max(post.kappa1_t, KAPPA_FLOOR)
    k2 = max(post.kappa2_t, KAPPA_FLOOR)
    logc, lam = _safe_log_norms(np.array([k1]), np.array([k2]), np.array([sine_approx_lambda(post)]))
    return (post.mu_t, post.nu_t, k1, k2, float(lam[0])), float(logc[0])


def mixture_full_conditional(prior: SineMixture | None, phi, psi, omegas) -> ProposalMixture:
    """Approximate full conditional of the means as a sine mixture.

    ``omegas`` is one precision (omega11, omega12, omega22) shared by all
    points or an (n, 3) array; likelihood terms use kappa1 = omega11,
    kappa2 = omega22, lambda = -omega12. Weights are
    p*_k ∝ p_k C_k / C~_k where C~_k is the constant of the exact
    eight-parameter component, obtained by one-dimensional quadrature.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    om = np.asarray(omegas, dtype=float).reshape(-1, 3)
    if prior is not None and len(phi) == 0:
        return ProposalMixture.from_mixture(prior)
    k1, k2, lm = om[:, 0], om[:, 2], -om[:, 1]
    if prior is None:
        if len(phi) == 0:
            return ProposalMixture.uniform()
        comp, logc = _collapse(eight_param_posterior(phi, psi, k1, k2, lm, None))
        return ProposalMixture(np.zeros(1), np.array([comp]), np.array([logc]))
    params = []
    log_norms = []
    log_w = []
    for w, c in zip(prior.weights, prior.components):
        post = eight_param_posterior(phi, psi, k1, k2, lm, c)
        comp, logc = _collapse(post)
        params.append(comp)
        log_norms.append(logc)
        with np.errstate(divide="ignore"):
            log_w.append(math.log(w) if w > 0 else -math.inf)
        log_w[-1] += c.log_norm + post.log_integral()
    log_w = np.array(log_w)
    log_w -= logsumexp(log_w)
    return ProposalMixture(log_w, np.array(params), np.array(log_norms))


def mean_target_logdensity(prior: SineMixture | None, phi, psi, omegas):
    """Exact unnormalized log full conditional of (mu, nu) as a callable."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    om = np.asarray(omegas, dtype=float).reshape(-1, 3)
    k1, k2, lm = om[:, 0], om[:, 2], -om[:, 1]

    def target(mu, nu):
        mu_a = np.asarray(mu, dtype=float)[..., None]
        nu_a = np.asarray(nu, dtype=float)[..., None]
        out = np.sum(sine_log_kernel(phi, psi, mu_a, nu_a, k1, k2, lm), axis=-1)
        if prior is not None:
            out = out + prior.log_density(mu, nu)
        return float(out) if np.ndim(out) == 0 else out

    return target


def sample_mean_full_conditional(current, proposal: ProposalMixture, target_logdensity,
                                 rng: np.random.Generator, candidate=None):
    """One independence Metropolis-Hastings step for (mu, nu).

    ``candidate`` may carry a pre-drawn proposal point (used when proposals
    for many positions are drawn in one batch). Returns ((mu, nu), accepted).
    """
    if candidate is None:
        candidate = proposal.sample(rng, 1)[0]
    u = rng.random()
    cur = np.asarray(current, dtype=float)
    new = np.asarray(candidate, dtype=float)
    with np.errstate(all="ignore"):
        log_ratio = (target_logdensity(new[0], new[1]) - proposal.log_density(new[0], new[1])
                     - target_logdensity(cur[0], cur[1]) + proposal.log_density(cur[0], cur[1]))
    if not np.isfinite(log_ratio) and not log_ratio == np.inf:
        return (float(cur[0]), float(cur[1])), False
    if math.log(u) < log_ratio if u > 0 else True:
        return (float(new[0]), float(new[1])), True
    return (float(cur[0]), float(cur[1])), False


def run_independence_chain(start, proposal: ProposalMixture, target_logdensity,
                           rng: np.random.Generator, steps: int):
    """Many MH steps against a fixed target; proposals are drawn in one batch."""
    cand = proposal.sample(rng, steps)
    u = rng.random(steps)
    lw = target_logdensity(cand[:, 0], cand[:, 1]) - proposal.log_density(cand[:, 0], cand[:, 1])
    cur = np.asarray(start, dtype=float)
    lw_cur = target_logdensity(cur[0], cur[1]) - proposal.log_density(cur[0], cur[1])
    out = np.empty((steps, 2))
    accepted = 0
    log_u = np.log(u)
    for t in range(steps):
        if log_u[t] < lw[t] - lw_cur:
            cur = cand[t]
            lw_cur = lw[t]
            accepted += 1
        out[t] = cur
    return out, accepted / steps



# Per-cell sufficient statistics for a block of observations, in this column order:
# count, sum cos phi, sum sin phi, sum cos psi, sum sin psi,
# sum cos phi cos psi, sum cos phi sin psi, sum sin phi cos psi, sum sin phi sin psi.
N_STATS = 9


def angle_stats(phi, psi) -> np.ndarray:
    """The nine sufficient statistics of a set of angle pairs."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    cp, sp, cq, sq = np.cos(phi), np.sin(phi), np.cos(psi), np.sin(psi)
    return np.array([len(phi), cp.sum(), sp.sum(), cq.sum(), sq.sum(),
                     (cp * cq).sum(), (cp * sq).sum(), (sp * cq).sum(), (sp * sq).sum()])


def _pair_sum(stats, ac, as_, bc, bs):
    # sum_i (ac cos phi_i + as sin phi_i)(bc cos psi_i + bs sin psi_i)
    return (ac * bc * stats[..., 5] + ac * bs * stats[..., 6]
            + as_ * bc * stats[..., 7] + as_ * bs * stats[..., 8])


def data_log_kernel(stats, kappa1, kappa2, lam, mu, nu):
    """sum_i of the sine log kernel of each observation, from its statistics."""
    cm, sm, cn, sn = np.cos(mu), np.sin(mu), np.cos(nu), np.sin(nu)
    return (kappa1 * (cm * stats[..., 1] + sm * stats[..., 2])
            + kappa2 * (cn * stats[..., 3] + sn * stats[..., 4])
            + lam * _pair_sum(stats, -sm, cm, -sn, cn))


@dataclass(frozen=True)
class BatchProposal:
    """Many proposal mixtures at once, padded to a common component count."""

    log_weights: np.ndarray  # (P, K), -inf on padding
    params: np.ndarray       # (P, K, 5)
    log_norms: np.ndarray    # (P, K)

    def log_density(self, mu, nu) -> np.ndarray:
        return batch_mixture_log_density(self.params, self.log_weights + self.log_norms, mu, nu)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw per row, shape (P, 2)."""
        cum = np.cumsum(np.exp(self.log_weights), axis=1)
        u = rng.random(len(cum)) * cum[:, -1]
        k = np.minimum((u[:, None] >= cum).sum(axis=1), cum.shape[1] - 1)
        q = self.params[np.arange(len(k)), k]
        return sample_sine_arrays(q[:, 0], q[:, 1], q[:, 2], q[:, 3], q[:, 4], rng)


def batch_mixture_log_density(params, log_wc, mu, nu) -> np.ndarray:
    """Row-wise log sum_k exp(log_wc[k]) * kernel_k(mu, nu); ``params`` is (P, K, 5)."""
    mu = np.asarray(mu, dtype=float)[:, None]
    nu = np.asarray(nu, dtype=float)[:, None]
    terms = log_wc + sine_log_kernel(mu, nu, params[..., 0], params[..., 1], params[..., 2],
                                     params[..., 3], params[..., 4])
    return logsumexp(terms, axis=1)


def batch_full_conditionals(stats, kappa1, kappa2, lam, prior_params, prior_log_wc) -> BatchProposal:
    """Vector form of mixture_full_conditional over P independent blocks.

    ``stats`` (P, 9) summarizes each block's observations, which share the
    likelihood parameters ``kappa1``, ``kappa2``, ``lam`` (P,). Prior
    mixtures are padded to (P, K, 5) with log(p_k) + log C_k in
    ``prior_log_wc`` (-inf on padding). A zero-concentration component
    stands for the flat prior. Blocks with no observations get their prior
    back unchanged.
    """
    stats = np.asarray(stats, dtype=float)
    k1 = np.asarray(kappa1, dtype=float)[:, None]
    k2 = np.asarray(kappa2, dtype=float)[:, None]
    lm = np.asarray(lam, dtype=float)[:, None]
    st = stats[:, None, :]
    m0, n0, k10, k20, l0 = (prior_params[..., i] for i in range(5))
    r1x = k1 * st[..., 1] + k10 * np.cos(m0)
    r1y = k1 * st[..., 2] + k10 * np.sin(m0)
    r2x = k2 * st[..., 3] + k20 * np.cos(n0)
    r2y = k2 * st[..., 4] + k20 * np.sin(n0)
    kap1 = np.hypot(r1x, r1y)
    kap2 = np.hypot(r2x, r2y)
    mu_t = np.arctan2(r1y, r1x)
    nu_t = np.arctan2(r2y, r2x)
    cm, sm, cn, sn = np.cos(mu_t), np.sin(mu_t), np.cos(nu_t), np.sin(nu_t)
    dm, dn = m0 - mu_t, n0 - nu_t
    a11 = lm * _pair_sum(st, -sm, cm, -sn, cn) + l0 * np.sin(dm) * np.sin(dn)
    a12 = -lm * _pair_sum(st, -sm, cm, cn, sn) - l0 * np.sin(dm) * np.cos(dn)
    a21 = -lm * _pair_sum(st, cm, sm, -sn, cn) - l0 * np.cos(dm) * np.sin(dn)
    a22 = lm * _pair_sum(st, cm, sm, cn, sn) + l0 * np.cos(dm) * np.cos(dn)
    trace = lm * (st[..., 5] + st[..., 8]) + l0 * np.cos(m0 - n0)
    denom = np.cos(mu_t - nu_t)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_t = np.where(np.abs(denom) < LAMBDA_DENOM_EPS, 0.0, trace / denom)

    live = np.isfinite(prior_log_wc)
    log_int = np.full(live.shape, -np.inf)
    a_flat = np.stack([a11[live], a12[live], a21[live], a22[live]], axis=1)
    log_int[live] = _kernels.log_eight_param_integral_many(
        np.ascontiguousarray(kap1[live]), np.ascontiguousarray(kap2[live]), a_flat)
    log_w = prior_log_wc + log_int
    log_w = log_w - logsumexp(log_w, axis=1, keepdims=True)

    params = np.stack([wrap_angle(mu_t), wrap_angle(nu_t), np.maximum(kap1, KAPPA_FLOOR),
                       np.maximum(kap2, KAPPA_FLOOR), lam_t], axis=-1)
    params[~live] = 0.0
    log_norms = np.full(live.shape, -np.inf)
    log_norms[live], params[live, 4] = _safe_log_norms(params[live, 2], params[live, 3],
                                                       params[live, 4])

    empty = stats[:, 0] == 0
    if empty.any():
        prior_c = np.where(live, _prior_log_norms(prior_params), -np.inf)
        params[empty] = prior_params[empty]
        log_norms[empty] = prior_c[empty]
        lw = np.where(live, prior_log_wc - np.where(live, prior_c, 0.0), -np.inf)[empty]
        log_w[empty] = lw - logsumexp(lw, axis=1, keepdims=True)
    return BatchProposal(log_w, params, log_norms)


def _prior_log_norms(prior_params) -> np.ndarray:
    p = prior_params.reshape(-1, 5)
    out = _kernels.log_sine_norm_many(np.ascontiguousarray(p[:, 2]), np.ascontiguousarray(p[:, 3]),
                                      np.ascontiguousarray(p[:, 4]), NORM_REL_TOL, NORM_MAX_TERMS)
    return out.reshape(prior_params.shape[:-1])


def pad_mixtures(mixtures, flat_log_density: float):
    """Stack mixtures (None for the flat prior) into (P, K, 5) params and (P, K) log(p C)."""
    k = max([1] + [len(mx) for mx in mixtures if mx is not None])
    params = np.zeros((len(mixtures), k, 5))
    log_wc = np.full((len(mixtures), k), -np.inf)
    for i, mx in enumerate(mixtures):
        if mx is None:
            log_wc[i, 0] = flat_log_density
            continue
        p, lwc = mx._arrays()
        params[i, :len(p)] = p
        log_wc[i, :len(p)] = lwc
    return params, log_wc


__all__ = [
    "BatchProposal",
    "angle_stats",
    "batch_full_conditionals",
    "batch_mixture_log_density",
    "data_log_kernel",
    "pad_mixtures",
    "EightParamPosterior",
    "ProposalMixture",
    "eight_param_posterior",
    "mean_target_logdensity",
    "mixture_full_conditional",
    "run_independence_chain",
    "sample_mean_full_conditional",
    "sine_approx_lambda",
]
