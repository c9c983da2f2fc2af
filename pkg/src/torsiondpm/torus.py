"""Angles on the torus and the bivariate von Mises sine model.

The sine model density for an angle pair (phi, psi) is

    C exp{k1 cos(phi - mu) + k2 cos(psi - nu) + lam sin(phi - mu) sin(psi - nu)}

with C given by a series in modified Bessel functions of the first kind.
All angles are radians in (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels

TWO_PI = 2.0 * math.pi

NORM_REL_TOL = 1e-12
NORM_MAX_TERMS = 10_000
GIBBS_STEPS = 50


class ConvergenceError(ArithmeticError):
    """A series or fixed-point iteration did not converge within its cap."""


def wrap_angle(theta):
    """Map angles into (-pi, pi]. Works on scalars and arrays."""
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("angles must be finite")
    # values already in range pass through untouched, so wrapping is idempotent
    inside = (arr > -math.pi) & (arr <= math.pi)
    out = np.where(inside, arr, math.pi - np.mod(math.pi - arr, TWO_PI))
    if np.ndim(out) == 0:
        return float(out)
    return out


def angular_diff(a, b):
    """Signed shortest arc from ``b`` to ``a``, in (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class AnglePair:
    phi: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(self.phi))
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.psi])


@dataclass(frozen=True)
class SineModelParams:
    mu: float
    nu: float
    kappa1: float
    kappa2: float
    lam: float = 0.0

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError(f"concentrations must be positive, got {self.kappa1}, {self.kappa2}")
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        object.__setattr__(self, "mu", wrap_angle(self.mu))
        object.__setattr__(self, "nu", wrap_angle(self.nu))
        object.__setattr__(self, "kappa1", float(self.kappa1))
        object.__setattr__(self, "kappa2", float(self.kappa2))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def log_norm(self) -> float:
        return log_sine_norm_constant(self.kappa1, self.kappa2, self.lam)


@dataclass(frozen=True)
class PrecisionMatrix:
    """Symmetric 2x2 precision matrix stored by its three free entries."""

    omega11: float
    omega12: float
    omega22: float

    def __post_init__(self):
        det = self.omega11 * self.omega22 - self.omega12**2
        if not (self.omega11 > 0 and det > 0):
            raise ValueError("precision matrix must be positive definite")

    def as_array(self) -> np.ndarray:
        return np.array([[self.omega11, self.omega12], [self.omega12, self.omega22]])

    @classmethod
    def from_array(cls, omega) -> "PrecisionMatrix":
        omega = np.asarray(omega, dtype=float)
        return cls(float(omega[0, 0]), float(0.5 * (omega[0, 1] + omega[1, 0])), float(omega[1, 1]))


def bessel_i(order: int, x: float, scaled: bool = False) -> float:
    """Modified Bessel function of the first kind, I_order(x).

    With ``scaled=True`` returns I_order(x) * exp(-x), which never overflows.
    Small arguments use the power series; otherwise ratios come from a
    normalized backward recurrence.
    """
    if order < 0 or int(order) != order:
        raise ValueError("order must be a non-negative integer")
    if not (x >= 0 and math.isfinite(x)):
        raise ValueError("x must be finite and non-negative")
    log_val = _kernels.log_ive(int(order), float(x))
    if scaled:
        return math.exp(log_val)
    log_val += x
    if log_val > math.log(np.finfo(float).max):
        raise OverflowError(f"I_{order}({x}) exceeds the float range; use scaled=True")
    return math.exp(log_val)


@lru_cache(maxsize=65536)
def log_sine_norm_constant(kappa1: float, kappa2: float, lam: float) -> float:
    """log C for the sine model; raises ConvergenceError past the term cap."""
    val, nterms = _kernels.log_sine_norm(float(kappa1), float(kappa2), float(lam),
                                         NORM_REL_TOL, NORM_MAX_TERMS)
    if not math.isfinite(val):
        raise ConvergenceError(
            f"normalizing series did not converge in {NORM_MAX_TERMS} terms "
            f"(kappa1={kappa1}, kappa2={kappa2}, lambda={lam})")
    return val


def log_sine_norm_constants(kappa1, kappa2, lam) -> np.ndarray:
    """Vectorized log C over arrays of parameters."""
    k1, k2, lm = np.broadcast_arrays(np.asarray(kappa1, float), np.asarray(kappa2, float),
                                     np.asarray(lam, float))
    shape = k1.shape
    out = _kernels.log_sine_norm_many(k1.ravel().copy(), k2.ravel().copy(), lm.ravel().copy(),
                                      NORM_REL_TOL, NORM_MAX_TERMS)
    if not np.all(np.isfinite(out)):
        raise ConvergenceError("normalizing series did not converge for some parameters")
    return out.reshape(shape)


def sine_norm_constant(params: SineModelParams) -> float:
    """The normalizing constant C (not its inverse)."""
    return math.exp(params.log_norm)


def sine_log_kernel(phi, psi, mu, nu, kappa1, kappa2, lam):
    """Unnormalized log density; broadcasts over all arguments."""
    dphi = np.subtract(phi, mu)
    dpsi = np.subtract(psi, nu)
    return kappa1 * np.cos(dphi) + kappa2 * np.cos(dpsi) + lam * np.sin(dphi) * np.sin(dpsi)


def _split_angles(x):
    if isinstance(x, AnglePair):
        return x.phi, x.psi
    arr = np.asarray(x, dtype=float)
    return arr[..., 0], arr[..., 1]


def sine_log_density(x, params: SineModelParams):
    """Log density at ``x`` (an AnglePair or an array with trailing axis (phi, psi))."""
    phi, psi = _split_angles(x)
    out = params.log_norm + sine_log_kernel(phi, psi, params.mu, params.nu,
                                            params.kappa1, params.kappa2, params.lam)
    return float(out) if np.ndim(out) == 0 else out


def vm_log_density(theta, mu: float, kappa: float):
    """Univariate von Mises log density."""
    log_i0 = _kernels.log_ive0(float(kappa)) + kappa
    return kappa * np.cos(np.subtract(theta, mu)) - math.log(TWO_PI) - log_i0


def is_bimodal(params: SineModelParams) -> bool:
    return params.lam**2 >= params.kappa1 * params.kappa2


def gaussian_approximation(params: SineModelParams) -> tuple[AnglePair, PrecisionMatrix]:
    """Bivariate normal approximation of a unimodal sine model."""
    if is_bimodal(params):
        raise ValueError("gaussian approximation requires lambda^2 < kappa1 * kappa2")
    return (AnglePair(params.mu, params.nu),
            PrecisionMatrix(params.kappa1, -params.lam, params.kappa2))


def precision_to_sine(precision: PrecisionMatrix) -> tuple[float, float, float]:
    if not isinstance(precision, PrecisionMatrix):
        precision = PrecisionMatrix.from_array(precision)
    return precision.omega11, precision.omega22, -precision.omega12


def sample_sine_arrays(mu, nu, kappa1, kappa2, lam, rng: np.random.Generator,
                       steps: int = GIBBS_STEPS) -> np.ndarray:
    """One draw per broadcast element, by Gibbs on the exact conditionals.

    Given psi, phi is von Mises around mu + atan2(lam sin(psi - nu), kappa1)
    with concentration sqrt(kappa1^2 + lam^2 sin^2(psi - nu)), and
    symmetrically for psi. Returns an array of shape (..., 2).
    """
    mu, nu, k1, k2, lam = np.broadcast_arrays(*(np.asarray(a, float) for a in
                                                (mu, nu, kappa1, kappa2, lam)))
    phi = rng.vonmises(mu, k1)
    psi = rng.vonmises(nu, k2)
    if not np.any(lam):
        # the two angles are independent von Mises variables: the draw is exact
        return np.stack([wrap_angle(phi), wrap_angle(psi)], axis=-1)
    for _ in range(steps):
        b = lam * np.sin(psi - nu)
        phi = rng.vonmises(mu + np.arctan2(b, k1), np.hypot(k1, b))
        b = lam * np.sin(phi - mu)
        psi = rng.vonmises(nu + np.arctan2(b, k2), np.hypot(k2, b))
    return np.stack([wrap_angle(phi), wrap_angle(psi)], axis=-1)


def sample_sine_model(params: SineModelParams, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` independent draws as an array of shape (count, 2)."""
    full = np.full(count, 1.0)
    return sample_sine_arrays(params.mu * full, params.nu * full, params.kappa1 * full,
                              params.kappa2 * full, params.lam * full, rng)


def grid_centers(resolution: int) -> np.ndarray:
    """Cell centres of a uniform partition of (-pi, pi]."""
    h = TWO_PI / resolution
    return -math.pi + (np.arange(resolution) + 0.5) * h
