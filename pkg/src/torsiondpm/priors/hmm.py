"""Secondary-structure hidden Markov model used as a centering law for the means.

Hidden states are the four DSSP metatypes in the fixed order H, E, T, C.
Each state emits the (mu, nu) mean pair from a sine-model mixture; the
emission tables may differ by residue class (general, glycine, proline).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mixture import SineMixture

log = logging.getLogger(__name__)

STATES = ("H", "E", "T", "C")
STATE_INDEX = {s: i for i, s in enumerate(STATES)}
RESIDUE_CLASSES = ("GENERAL", "GLY", "PRO")


def _check_stochastic(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(matrix < 0):
        raise ValueError("transition probabilities must be non-negative")
    bad = np.abs(matrix.sum(axis=1) - 1.0) > 1e-12
    if np.any(bad):
        raise ValueError(f"transition rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    return matrix


def stationary_distribution(matrix, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Stationary law of an irreducible row-stochastic matrix by power iteration."""
    matrix = _check_stochastic(matrix)
    k = matrix.shape[0]
    reach = (matrix > 0) | np.eye(k, dtype=bool)
    for _ in range(k):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    if not reach.all():
        raise ValueError("transition matrix is reducible; stationary law is not unique")
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = pi @ matrix
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ArithmeticError(f"power iteration did not converge in {max_iter} steps "
                          "(periodic chain?)")


def estimate_transition_matrix(sequences, pseudocount: float = 1.0) -> np.ndarray:
    """Row-normalized transition counts over H/E/T/C label strings.

    Rows with no observed transitions and no pseudocount fall back to
    uniform, with a warning.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("no state sequences given")
    if pseudocount < 0:
        raise ValueError("pseudocount must be non-negative")
    counts = np.full((4, 4), float(pseudocount))
    for seq in sequences:
        try:
            idx = [STATE_INDEX[c] for c in seq.strip()]
        except KeyError as exc:
            raise ValueError(f"unknown state label {exc.args[0]!r}; expected one of H, E, T, C") from None
        np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    if empty.any():
        log.warning("no transitions out of states %s; using uniform rows",
                    [STATES[i] for i in np.flatnonzero(empty)])
        counts[empty] = 1.0
        totals = counts.sum(axis=1, keepdims=True)
    return counts / totals


@dataclass(frozen=True)
class ResiduePriorSet:
    """Per residue class, per state emission mixtures. GENERAL is mandatory."""

    tables: dict

    def __post_init__(self):
        if "GENERAL" not in self.tables:
            raise ValueError("emission tables must include the GENERAL residue class")
        for cls_name, table in self.tables.items():
            if cls_name not in RESIDUE_CLASSES:
                raise ValueError(f"unknown residue class {cls_name!r}")
            missing = [s for s in STATES if s not in table]
            if missing:
                raise ValueError(f"{cls_name} emission table is missing states {missing}")

    def table(self, residue_class: str = "GENERAL") -> dict:
        found = self.tables.get(residue_class)
        if found is None:
            if residue_class not in _warned:
                log.warning("no emission table for %s; using GENERAL", residue_class)
                _warned.add(residue_class)
            found = self.tables["GENERAL"]
        return found

    def emission(self, state: str, residue_class: str = "GENERAL") -> SineMixture:
        return self.table(residue_class)[state]


_warned: set = set()


@dataclass(frozen=True)
class SecondaryStructureHMM:
    transition: np.ndarray
    emissions: ResiduePriorSet
    initial: np.ndarray = field(default=None)

    def __post_init__(self):
        m = _check_stochastic(self.transition)
        if m.shape != (4, 4):
            raise ValueError("transition matrix must be 4x4 (states H, E, T, C)")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "transition", m)
        pi = stationary_distribution(m) if self.initial is None else np.asarray(self.initial, float)
        if np.max(np.abs(pi @ m - pi)) > 1e-10 or abs(pi.sum() - 1) > 1e-10:
            raise ValueError("initial distribution must be stationary for the transition matrix")
        pi = pi.copy()
        pi.flags.writeable = False
        object.__setattr__(self, "initial", pi)

    def log_emissions(self, means, residue_classes=None) -> np.ndarray:
        """Emission log densities, shape (m, 4)."""
        means = np.asarray(means, dtype=float).reshape(-1, 2)
        classes = residue_classes or ["GENERAL"] * len(means)
        out = np.empty((len(means), 4))
        for j, (mu, nu) in enumerate(means):
            table = self.emissions.table(classes[j])
            for k, s in enumerate(STATES):
                out[j, k] = table[s].log_density(mu, nu)
        return out

    def sample_states(self, length: int, rng: np.random.Generator, size: int | None = None):
        """Draw state index chains from the bare Markov chain."""
        n = 1 if size is None else size
        out = np.empty((n, length), dtype=np.int64)
        cum_init = np.cumsum(self.initial)
        cum_trans = np.cumsum(self.transition, axis=1)
        u = rng.random((n, length))
        out[:, 0] = np.minimum(np.searchsorted(cum_init, u[:, 0], side="right"), 3)
        for j in range(1, length):
            rows = cum_trans[out[:, j - 1]]
            out[:, j] = np.minimum((u[:, j, None] >= rows).sum(axis=1), 3)
        return out[0] if size is None else out


def _state_indices(states) -> np.ndarray:
    return np.array([STATE_INDEX[s] if isinstance(s, str) else int(s) for s in states])


def hmm_log_prior(means, states, hmm: SecondaryStructureHMM, residue_classes=None) -> float:
    """log pi(s_1) + sum log M(s_j | s_{j-1}) + sum log f(mu_j, nu_j | s_j)."""
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    s = _state_indices(states)
    if len(s) != len(means):
        raise ValueError("state sequence and means must have the same length")
    classes = residue_classes or ["GENERAL"] * len(means)
    with np.errstate(divide="ignore"):
        total = np.log(hmm.initial[s[0]])
        total += np.log(hmm.transition[s[:-1], s[1:]]).sum()
    for j, (mu, nu) in enumerate(means):
        total += hmm.emissions.emission(STATES[s[j]], classes[j]).log_density(mu, nu)
    return float(total)


def _forward_scaled(log_emit: np.ndarray, hmm: SecondaryStructureHMM):
    """Normalized forward messages and the log of each step's normalizer."""
    m = len(log_emit)
    top = log_emit.max(axis=1, keepdims=True)
    emit = np.exp(log_emit - top)
    alpha = np.empty_like(emit)
    log_c = np.empty(m)
    prev = hmm.initial
    for j in range(m):
        a = emit[j] * (prev if j == 0 else prev @ hmm.transition)
        c = a.sum()
        if c == 0.0:
            raise ValueError(f"state chain has zero probability at position {j}")
        alpha[j] = prev = a / c
        log_c[j] = math.log(c) + top[j, 0]
    return alpha, log_c


def forward_log_probs(log_emit: np.ndarray, hmm: SecondaryStructureHMM) -> np.ndarray:
    """Log forward messages alpha_j(s) = log p(s_j = s, emissions 1..j)."""
    alpha, log_c = _forward_scaled(log_emit, hmm)
    with np.errstate(divide="ignore"):
        return np.log(alpha) + np.cumsum(log_c)[:, None]


def fb_sample_states_from_emissions(log_emit: np.ndarray, hmm: SecondaryStructureHMM,
                                    rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Forward filtering, backward sampling of a state index chain.

    With ``size`` set, returns that many independent chains (size, m) from
    one forward pass.
    """
    dead = np.all(np.isneginf(log_emit), axis=1)
    if dead.any():
        raise ValueError(f"all state emission densities are zero at positions {np.flatnonzero(dead).tolist()}")
    alpha, _ = _forward_scaled(log_emit, hmm)
    m = len(log_emit)
    if size is None:
        s = np.empty(m, dtype=np.int64)
        u = rng.random(m)
        p = alpha[-1]
        for j in range(m - 1, -1, -1):
            if j < m - 1:
                p = alpha[j] * hmm.transition[:, s[j + 1]]
            cum = np.cumsum(p)
            s[j] = min(int(np.searchsorted(cum, u[j] * cum[-1], side="right")), 3)
        return s
    s = np.empty((size, m), dtype=np.int64)
    u = rng.random((size, m))
    p = np.broadcast_to(alpha[-1], (size, 4))
    for j in range(m - 1, -1, -1):
        if j < m - 1:
            p = alpha[j] * hmm.transition[:, s[:, j + 1]].T
        cum = np.cumsum(p, axis=1)
        s[:, j] = np.minimum((u[:, j, None] * cum[:, -1:] >= cum).sum(axis=1), 3)
    return s


def fb_sample_states(means, hmm: SecondaryStructureHMM, rng: np.random.Generator,
                     residue_classes=None, size: int | None = None) -> np.ndarray:
    """Exact draw of the state chain given the means (independent of the data)."""
    return fb_sample_states_from_emissions(hmm.log_emissions(means, residue_classes), hmm, rng, size)
