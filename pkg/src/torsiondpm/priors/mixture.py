"""Finite mixtures of sine models, used as priors and proposals for the means."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..torus import SineModelParams, log_sine_norm_constants, sample_sine_arrays, sine_log_kernel

log = logging.getLogger(__name__)

MAX_COMPONENTS = 8


@dataclass(frozen=True)
class SineMixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != len(w) or not 1 <= len(w) <= MAX_COMPONENTS:
            raise ValueError(f"a mixture needs 1..{MAX_COMPONENTS} weighted components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {w.sum()!r}")
        for c in self.components:
            if not isinstance(c, SineModelParams):
                raise TypeError("mixture components must be SineModelParams")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def from_rows(cls, rows, warn_tol: float = 1e-6, max_error: float = 5e-3) -> "SineMixture":
        """Build from rows of (p, mu, nu, kappa1, kappa2, lambda).

        Printed tables carry rounded weights, so sums off by up to
        ``max_error`` are renormalized (with a warning past ``warn_tol``).
        """
        rows = [tuple(map(float, r)) for r in rows]
        if any(len(r) != 6 for r in rows):
            raise ValueError("mixture rows need 6 columns: p, mu, nu, kappa1, kappa2, lambda")
        w = np.array([r[0] for r in rows])
        total = w.sum()
        if abs(total - 1.0) > max_error:
            raise ValueError(f"mixture weights sum to {total}, expected 1")
        if abs(total - 1.0) > warn_tol:
            log.warning("mixture weights sum to %.6g; renormalizing", total)
        if abs(total - 1.0) > 1e-12:
            w = w / total  # weights already summing to 1 are kept bit for bit
        comps = tuple(SineModelParams(*r[1:]) for r in rows)
        return cls(tuple(w), comps)

    @classmethod
    def single(cls, params: SineModelParams) -> "SineMixture":
        return cls((1.0,), (params,))

    def __len__(self):
        return len(self.weights)

    def as_rows(self) -> list:
        return [[w, c.mu, c.nu, c.kappa1, c.kappa2, c.lam]
                for w, c in zip(self.weights, self.components)]

    def _arrays(self):
        cached = self.__dict__.get("_arr")
        if cached is None:
            p = np.array([[c.mu, c.nu, c.kappa1, c.kappa2, c.lam] for c in self.components])
            logc = log_sine_norm_constants(p[:, 2], p[:, 3], p[:, 4])
            with np.errstate(divide="ignore"):
                logw = np.log(np.asarray(self.weights))
            cached = (p, logw + logc)
            object.__setattr__(self, "_arr", cached)
        return cached

    def component_log_densities(self, mu, nu) -> np.ndarray:
        """Weighted component log densities, shape (..., K)."""
        p, logwc = self._arrays()
        mu = np.asarray(mu, dtype=float)[..., None]
        nu = np.asarray(nu, dtype=float)[..., None]
        return logwc + sine_log_kernel(mu, nu, p[:, 0], p[:, 1], p[:, 2], p[:, 3], p[:, 4])

    def log_density(self, mu, nu):
        out = logsumexp(self.component_log_densities(mu, nu), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """(count, 2) draws: component by weight, then the component's Gibbs sampler."""
        p, _ = self._arrays()
        k = rng.choice(len(self.weights), size=count, p=np.asarray(self.weights))
        q = p[k]
        return sample_sine_arrays(q[:, 0], q[:, 1], q[:, 2], q[:, 3], q[:, 4], rng)
