"""Centering distributions H1 H2 for the per-position cluster parameters.

Both priors share a Wishart law for the precisions. They differ in the
law of the means: independent sine models (or the flat density) for the
noninformative prior, a secondary-structure HMM for the DPM-HMM prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..torus import SineModelParams, TWO_PI, sample_sine_arrays, sine_log_density
from .hmm import RESIDUE_CLASSES, STATES, SecondaryStructureHMM, hmm_log_prior
from .mixture import SineMixture
from .wishart import WishartPrior

LOG_FLAT = -2.0 * math.log(TWO_PI)


def _classes(residue_classes, m: int) -> list:
    if residue_classes is None:
        return ["GENERAL"] * m
    classes = list(residue_classes)
    if len(classes) != m:
        raise ValueError(f"expected {m} residue classes, got {len(classes)}")
    return classes


@dataclass(frozen=True)
class NoninformativePrior:
    """Independent h1 on each position's means and h2 on its precision.

    ``h1=None`` is the flat density (2 pi)^-2 on the torus.
    """

    h1: SineModelParams | None
    wishart: WishartPrior

    uses_states = False

    @property
    def uniform(self) -> bool:
        return self.h1 is None

    def mean_prior(self, state=None, residue_class: str = "GENERAL") -> SineMixture | None:
        return None if self.h1 is None else SineMixture.single(self.h1)

    def draw_means(self, count: int, m: int, rng: np.random.Generator, residue_classes=None):
        """Means of ``count`` fresh parameter sets, shape (count, m, 2); states are None."""
        if self.h1 is None:
            return rng.uniform(-math.pi, math.pi, size=(count, m, 2)), None
        h = self.h1
        shape = (count, m)
        draws = sample_sine_arrays(np.full(shape, h.mu), np.full(shape, h.nu), np.full(shape, h.kappa1),
                                   np.full(shape, h.kappa2), np.full(shape, h.lam), rng)
        return draws, None

    def log_density_means(self, means, states=None, residue_classes=None) -> float:
        means = np.asarray(means, dtype=float).reshape(-1, 2)
        if self.h1 is None:
            return LOG_FLAT * len(means)
        return float(np.sum(sine_log_density(means, self.h1)))


@dataclass(frozen=True)
class HMMPrior:
    """DPM-HMM centering law: state chain from the HMM, means from state emissions."""

    hmm: SecondaryStructureHMM
    wishart: WishartPrior

    uses_states = True

    def mean_prior(self, state, residue_class: str = "GENERAL") -> SineMixture:
        label = STATES[state] if not isinstance(state, str) else state
        return self.hmm.emissions.emission(label, residue_class)

    def draw_means(self, count: int, m: int, rng: np.random.Generator, residue_classes=None):
        """Means (count, m, 2) and state index chains (count, m)."""
        classes = np.array(_classes(residue_classes, m))
        states = self.hmm.sample_states(m, rng, size=count)
        comp = np.zeros((count, m, 5))
        for cls_name in RESIDUE_CLASSES:
            col = classes == cls_name
            if not col.any():
                continue
            table = self.hmm.emissions.table(cls_name)
            for k, label in enumerate(STATES):
                hit = (states == k) & col[None, :]
                n_hit = int(hit.sum())
                if n_hit:
                    mix = table[label]
                    pick = rng.choice(len(mix), size=n_hit, p=np.asarray(mix.weights))
                    comp[hit] = mix._arrays()[0][pick]
        means = sample_sine_arrays(comp[..., 0], comp[..., 1], comp[..., 2], comp[..., 3],
                                   comp[..., 4], rng)
        return means, states

    def log_density_means(self, means, states, residue_classes=None) -> float:
        means = np.asarray(means, dtype=float).reshape(-1, 2)
        return hmm_log_prior(means, states, self.hmm, _classes(residue_classes, len(means)))


def default_noninformative(uniform: bool = False) -> NoninformativePrior:
    """mu0 = nu0 = 0, kappa10 = kappa20 = 0.1, lambda0 = 0, v = 1, B = diag(0.25)."""
    h1 = None if uniform else SineModelParams(0.0, 0.0, 0.1, 0.1, 0.0)
    return NoninformativePrior(h1, WishartPrior.diagonal(1.0, 0.25))
