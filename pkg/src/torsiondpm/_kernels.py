"""Compiled numerical kernels: Bessel ratios and the sine-model normalizer series."""

import math

import numpy as np
from numba import njit

_LOG_4PI2 = math.log(4.0 * math.pi * math.pi)
_RESCALE = 1e250


@njit(cache=True)
def bessel_ratio_over_x(x, n):
    """sigma[k] = I_k(x) / (x I_{k-1}(x)) for k = 1..n, by backward recurrence.

    sigma_k = 1 / (2k + x^2 sigma_{k+1}); the form stays finite as x -> 0.
    """
    start = n + int(6.0 * math.sqrt(x)) + 40
    sigma = np.zeros(n + 1)
    s = 0.0
    x2 = x * x
    for k in range(start, 0, -1):
        s = 1.0 / (2.0 * k + x2 * s)
        if k <= n:
            sigma[k] = s
    return sigma


@njit(cache=True)
def log_ive0(x):
    """log(I_0(x) exp(-x)) for x >= 0."""
    if x == 0.0:
        return 0.0
    if x < 2.0:
        # power series sum_k (x^2/4)^k / (k!)^2
        q = 0.25 * x * x
        term = 1.0
        total = 1.0
        k = 0
        while term > 1e-18 * total:
            k += 1
            term *= q / (k * k)
            total += term
        return math.log(total) - x
    if x >= 20.0:
        # Hankel asymptotic series; its smallest term is far below 1e-17 here
        term = 1.0
        total = 1.0
        k = 0
        while abs(term) > 1e-17 * total:
            k += 1
            term *= (2.0 * k - 1.0) ** 2 / (8.0 * k * x)
            total += term
        return math.log(total) - 0.5 * math.log(2.0 * math.pi * x)
    # Miller's backward recurrence, normalized by exp(x) = I_0 + 2 sum_{k>=1} I_k
    b_next = 0.0
    b = 1.0
    s = 0.0
    for k in range(int(x + 6.0 * math.sqrt(x)) + 30, 0, -1):
        s += 2.0 * b
        b, b_next = 2.0 * k / x * b + b_next, b
        if b > 1e200:
            b *= 1e-200
            b_next *= 1e-200
            s *= 1e-200
    return math.log(b / (s + b))


@njit(cache=True)
def log_ive(order, x):
    """log(I_order(x) exp(-x)); -inf when x == 0 and order > 0."""
    if x == 0.0:
        return 0.0 if order == 0 else -np.inf
    out = log_ive0(x)
    if order == 0:
        return out
    sigma = bessel_ratio_over_x(x, order)
    for k in range(1, order + 1):
        out += math.log(x * sigma[k])
    return out


@njit(cache=True)
def log_sine_norm(k1, k2, lam, rel_tol, max_terms):
    """Return (log C, terms used) for the sine-model normalizer.

    C^{-1} = 4 pi^2 sum_m binom(2m, m) (lam^2 / (4 k1 k2))^m I_m(k1) I_m(k2).
    Terms are accumulated relative to the m = 0 term with exponentially
    scaled Bessel values. A NaN result means the cap was reached.
    """
    base = _LOG_4PI2 + k1 + k2 + log_ive0(k1) + log_ive0(k2)
    if lam == 0.0:
        return -base, 1
    half_lam2 = 0.25 * lam * lam
    n = 64
    s1 = bessel_ratio_over_x(k1, n)
    s2 = bessel_ratio_over_x(k2, n)
    term = 1.0
    total = 1.0
    log_scale = 0.0
    m = 0
    while True:
        m += 1
        if m > max_terms:
            return np.nan, m - 1
        if m > n:
            n = min(2 * n, max_terms + 1)
            s1 = bessel_ratio_over_x(k1, n)
            s2 = bessel_ratio_over_x(k2, n)
        ratio = (4.0 - 2.0 / m) * half_lam2 * s1[m] * s2[m]
        term *= ratio
        total += term
        if total > _RESCALE:
            total /= _RESCALE
            term /= _RESCALE
            log_scale += math.log(_RESCALE)
        if ratio < 1.0 and term * ratio / (1.0 - ratio) < rel_tol * total:
            return -(base + log_scale + math.log(total)), m + 1


@njit(cache=True)
def log_sine_norm_many(k1, k2, lam, rel_tol, max_terms):
    out = np.empty(k1.shape[0])
    for i in range(k1.shape[0]):
        out[i] = log_sine_norm(k1[i], k2[i], lam[i], rel_tol, max_terms)[0]
    return out


@njit(cache=True)
def log_eight_param_integral(k1, k2, a11, a12, a21, a22):
    """log of the double integral of the eight-parameter kernel over the torus.

    The kernel is k1 cos u + k2 cos w + [cos u, sin u] A [cos w, sin w]^T.
    For fixed u the w-integral is 2 pi I_0(R(u)), leaving a smooth periodic
    integral in u that the trapezoid rule resolves to machine precision.
    """
    scale = k1 + k2 + abs(a11) + abs(a12) + abs(a21) + abs(a22)
    n = max(64, int(10.0 * math.sqrt(scale)) + 48)
    h = 2.0 * math.pi / n
    vals = np.empty(n)
    top = -np.inf
    for t in range(n):
        u = -math.pi + t * h
        cu = math.cos(u)
        su = math.sin(u)
        a = k2 + a11 * cu + a21 * su
        b = a12 * cu + a22 * su
        r = math.sqrt(a * a + b * b)
        v = k1 * cu + r + log_ive0(r)
        vals[t] = v
        if v > top:
            top = v
    total = 0.0
    for t in range(n):
        total += math.exp(vals[t] - top)
    return top + math.log(total * h) + math.log(2.0 * math.pi)


@njit(cache=True)
def log_eight_param_integral_many(k1, k2, a):
    """Vector form of log_eight_param_integral; ``a`` has shape (n, 4) in row-major order."""
    out = np.empty(k1.shape[0])
    for i in range(k1.shape[0]):
        out[i] = log_eight_param_integral(k1[i], k2[i], a[i, 0], a[i, 1], a[i, 2], a[i, 3])
    return out


@njit(cache=True)
def sine_mixture_log_grid(params, log_w, centers):
    """log sum_k w_k f_k(phi_u, psi_v) on a grid, accumulated in log space.

    ``params`` rows are (mu, nu, kappa1, kappa2, lambda, log C); ``log_w``
    holds the log weights. Each cell keeps a running maximum so that no
    term underflows, whatever the concentration.
    """
    g = centers.shape[0]
    top = np.full((g, g), -np.inf)
    acc = np.zeros((g, g))
    cp = np.empty(g)
    sp = np.empty(g)
    cq = np.empty(g)
    sq = np.empty(g)
    for k in range(params.shape[0]):
        mu, nu, k1, k2, lam, logc = (params[k, 0], params[k, 1], params[k, 2],
                                     params[k, 3], params[k, 4], params[k, 5])
        for u in range(g):
            cp[u] = k1 * math.cos(centers[u] - mu)
            sp[u] = lam * math.sin(centers[u] - mu)
            cq[u] = k2 * math.cos(centers[u] - nu)
            sq[u] = math.sin(centers[u] - nu)
        base = log_w[k] + logc
        for u in range(g):
            for v in range(g):
                val = base + cp[u] + cq[v] + sp[u] * sq[v]
                t = top[u, v]
                if val > t:
                    acc[u, v] = acc[u, v] * math.exp(t - val) + 1.0
                    top[u, v] = val
                else:
                    acc[u, v] += math.exp(val - t)
    return top + np.log(acc)
