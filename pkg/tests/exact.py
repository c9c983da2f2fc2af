"""Exact transition kernels for tiny Dirichlet-process problems.

With a discrete base measure G0 on L parameter values, the joint state of
two items is either "together with parameter l" or "apart with parameters
(a, b)". The auxiliary-variable assignment sweep (item 0, then item 1)
is enumerated exactly by feeding every possible auxiliary draw through
``reassignment_probabilities``.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from torsiondpm.sampler import reassignment_probabilities


def two_item_states(n_values: int) -> list:
    together = [("T", l) for l in range(n_values)]
    apart = [("S", a, b) for a, b in itertools.product(range(n_values), repeat=2)]
    return together + apart


def exact_posterior(lik: np.ndarray, g: np.ndarray, alpha0: float) -> np.ndarray:
    """p(partition, parameters | data) over ``two_item_states``; ``lik`` is (2, L)."""
    w = []
    for s in two_item_states(len(g)):
        if s[0] == "T":
            w.append(g[s[1]] * lik[0, s[1]] * lik[1, s[1]] / (1 + alpha0))
        else:
            w.append(alpha0 * g[s[1]] * g[s[2]] * lik[0, s[1]] * lik[1, s[2]] / (1 + alpha0))
    w = np.array(w)
    return w / w.sum()


def _item_step(state, i, lik, g, alpha0):
    """Distribution over next states after reassigning item ``i``."""
    out = {}

    def add(s, p):
        out[s] = out.get(s, 0.0) + p

    if state[0] == "T":
        l = state[1]
        labels = np.array([0, 0])
        counts = np.array([2, 0])
        for aux in range(len(g)):
            row = np.log(np.array([lik[i, l], lik[i, aux]]))
            p = reassignment_probabilities(i, labels, counts, row, 1, alpha0)
            add(state, g[aux] * p[0])
            moved = ("S", aux, l) if i == 0 else ("S", l, aux)
            add(moved, g[aux] * p[1])
        return out
    a, b = state[1], state[2]
    labels = np.array([0, 1])
    counts = np.array([1, 1, 0])
    # the singleton's own parameters serve as the auxiliary; column 2 is never used
    row = np.log(np.array([lik[i, a], lik[i, b], 1.0]))
    p = reassignment_probabilities(i, labels, counts, row, 2, alpha0)
    assert p[2] == 0.0
    own, other = (0, 1) if i == 0 else (1, 0)
    add(state, p[own])
    add(("T", (a, b)[other]), p[other])
    return out


def sweep_kernel(lik: np.ndarray, g: np.ndarray, alpha0: float) -> np.ndarray:
    states = two_item_states(len(g))
    index = {s: k for k, s in enumerate(states)}
    kernels = []
    for i in (0, 1):
        k = np.zeros((len(states), len(states)))
        for s in states:
            for t, p in _item_step(s, i, lik, g, alpha0).items():
                k[index[s], index[t]] += p
        kernels.append(k)
    return kernels[0] @ kernels[1]


def stationary_law(kernel: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(kernel.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    assert math.isclose(vals[k].real, 1.0, abs_tol=1e-12)
    v = np.real(vecs[:, k])
    return v / v.sum()
