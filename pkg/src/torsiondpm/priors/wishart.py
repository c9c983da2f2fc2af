"""Wishart prior on 2x2 precision matrices.

Parameterized as in Bernardo and Smith: density proportional to
|W|^(v - 3/2) exp(-tr(B W)), with mean v B^{-1}. This is the usual
Wishart with 2v degrees of freedom and scale matrix (2B)^{-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..torus import PrecisionMatrix


@dataclass(frozen=True)
class WishartPrior:
    dof: float
    scale_b: tuple  # ((b11, b12), (b12, b22))

    def __post_init__(self):
        b = np.asarray(self.scale_b, dtype=float)
        if b.shape != (2, 2) or not np.allclose(b, b.T):
            raise ValueError("Wishart scale must be a symmetric 2x2 matrix")
        if not (b[0, 0] > 0 and np.linalg.det(b) > 0):
            raise ValueError("Wishart scale must be positive definite")
        if not self.dof >= 1:
            raise ValueError(f"Wishart dof must be >= 1, got {self.dof}")
        object.__setattr__(self, "scale_b", tuple(map(tuple, b.tolist())))
        object.__setattr__(self, "dof", float(self.dof))

    @classmethod
    def diagonal(cls, dof: float, scale: float) -> "WishartPrior":
        return cls(dof, ((scale, 0.0), (0.0, scale)))

    @property
    def b(self) -> np.ndarray:
        return np.array(self.scale_b)

    @property
    def mean(self) -> np.ndarray:
        return self.dof * np.linalg.inv(self.b)

    def posterior(self, residuals: np.ndarray) -> "WishartPrior":
        """Conjugate update for zero-mean bivariate normal residuals of shape (N, 2)."""
        residuals = np.asarray(residuals, dtype=float).reshape(-1, 2)
        scatter = residuals.T @ residuals
        return WishartPrior(self.dof + 0.5 * len(residuals), self.b + 0.5 * scatter)


def _bartlett(dof, scale_b, rng, size):
    """Vectorized Bartlett draws; ``dof`` (size,), ``scale_b`` (size, 2, 2)."""
    sigma = np.linalg.inv(2.0 * scale_b)
    chol = np.linalg.cholesky(sigma)
    n = 2.0 * dof
    a = np.zeros((size, 2, 2))
    a[:, 0, 0] = np.sqrt(2.0 * rng.gamma(0.5 * n, size=size))
    a[:, 1, 1] = np.sqrt(2.0 * rng.gamma(0.5 * (n - 1.0), size=size))
    a[:, 1, 0] = rng.standard_normal(size)
    la = chol @ a
    return la @ np.swapaxes(la, 1, 2)


def wishart_sample_many(dofs, scales, rng: np.random.Generator) -> np.ndarray:
    """One draw per (dof, B) pair; returns (size, 2, 2) arrays."""
    dofs = np.atleast_1d(np.asarray(dofs, dtype=float))
    scales = np.asarray(scales, dtype=float).reshape(-1, 2, 2)
    out = _bartlett(dofs, scales, rng, len(dofs))
    out[:, 0, 1] = out[:, 1, 0] = 0.5 * (out[:, 0, 1] + out[:, 1, 0])
    return out


def wishart_sample(prior: WishartPrior, rng: np.random.Generator, size: int | None = None):
    """Draw precision matrices; a single PrecisionMatrix when ``size`` is None."""
    n = 1 if size is None else size
    draws = wishart_sample_many(np.full(n, prior.dof), np.broadcast_to(prior.b, (n, 2, 2)), rng)
    if size is None:
        return PrecisionMatrix.from_array(draws[0])
    return draws


def wishart_logdensity_arrays(omega11, omega12, omega22, dof, scale_b) -> np.ndarray:
    """Normalized log density on entry arrays; -inf outside the SPD cone."""
    b = np.asarray(scale_b, dtype=float)
    det = np.asarray(omega11) * omega22 - np.square(omega12)
    trace = b[..., 0, 0] * omega11 + 2.0 * b[..., 0, 1] * omega12 + b[..., 1, 1] * omega22
    log_det_b = np.log(b[..., 0, 0] * b[..., 1, 1] - b[..., 0, 1] ** 2)
    const = dof * log_det_b - _log_gamma2(dof)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = const + (dof - 1.5) * np.log(det) - trace
    return np.where((np.asarray(omega11) > 0) & (det > 0), out, -np.inf)


def _log_gamma2(a):
    # bivariate gamma function: Gamma_2(a) = sqrt(pi) Gamma(a) Gamma(a - 1/2)
    a = np.asarray(a, dtype=float)
    return 0.5 * math.log(math.pi) + gammaln(a) + gammaln(a - 0.5)


def wishart_logdensity(omega, prior: WishartPrior) -> float:
    if not isinstance(omega, PrecisionMatrix):
        omega = PrecisionMatrix.from_array(omega)
    val = wishart_logdensity_arrays(omega.omega11, omega.omega12, omega.omega22,
                                    prior.dof, prior.b)
    return float(val)


__all__ = [
    "WishartPrior",
    "wishart_logdensity",
    "wishart_logdensity_arrays",
    "wishart_sample",
    "wishart_sample_many",
]
