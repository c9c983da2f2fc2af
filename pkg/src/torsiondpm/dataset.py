"""Aligned angle-pair sequences with per-cell presence flags."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .priors.hmm import RESIDUE_CLASSES
from .torus import wrap_angle


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.flags.writeable = False
    return arr


def _normalize_cells(angles, present):
    present = np.asarray(present, dtype=bool)
    angles = np.array(angles, dtype=float)
    if angles.shape != present.shape + (2,):
        raise ValueError(f"angles shape {angles.shape} does not match presence shape {present.shape}")
    if not np.all(np.isfinite(angles[present])):
        raise ValueError("present cells need finite phi and psi")
    out = np.full(angles.shape, np.nan)
    out[present] = wrap_angle(angles[present])
    return out, present


@dataclass(frozen=True)
class AngleSequence:
    """One aligned sequence: (m, 2) angles, NaN where the position is absent."""

    angles: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        angles, present = _normalize_cells(self.angles, self.present)
        if present.ndim != 1:
            raise ValueError("an angle sequence has one presence flag per position")
        object.__setattr__(self, "angles", _frozen(angles))
        object.__setattr__(self, "present", _frozen(present))

    @classmethod
    def full(cls, angles) -> "AngleSequence":
        angles = np.asarray(angles, dtype=float)
        return cls(angles, np.ones(len(angles), dtype=bool))

    def __len__(self):
        return len(self.present)

    def restrict(self, mask) -> "AngleSequence":
        """Same angles with positions outside ``mask`` marked absent."""
        keep = self.present & np.asarray(mask, dtype=bool)
        return AngleSequence(np.where(keep[:, None], self.angles, np.nan), keep)


@dataclass(frozen=True)
class AlignmentDataset:
    """n aligned sequences over m positions.

    ``angles`` is (n, m, 2) with NaN in absent cells, ``present`` the (n, m)
    indicator a_ij. Every sequence needs at least one present cell; a
    position may be empty, in which case only the prior informs it.
    """

    ids: tuple
    angles: np.ndarray
    present: np.ndarray
    residue_classes: tuple

    def __post_init__(self):
        angles, present = _normalize_cells(self.angles, self.present)
        if present.ndim != 2:
            raise ValueError("presence flags must form an (n, m) matrix")
        n, m = present.shape
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("need one distinct identifier per sequence")
        classes = tuple(self.residue_classes)
        if len(classes) != m:
            raise ValueError(f"need {m} residue classes, got {len(classes)}")
        bad = [c for c in classes if c not in RESIDUE_CLASSES]
        if bad:
            raise ValueError(f"unknown residue classes {sorted(set(bad))}")
        empty = np.flatnonzero(~present.any(axis=1))
        if len(empty):
            raise ValueError(f"sequences {[ids[i] for i in empty]} have no observed positions")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "residue_classes", classes)
        object.__setattr__(self, "angles", _frozen(angles))
        object.__setattr__(self, "present", _frozen(present))

    @property
    def n(self) -> int:
        return self.present.shape[0]

    @property
    def m(self) -> int:
        return self.present.shape[1]

    def sequence(self, i: int) -> AngleSequence:
        return AngleSequence(self.angles[i], self.present[i])

    def without(self, i: int) -> "AlignmentDataset":
        """Leave-one-out copy with sequence ``i`` removed."""
        keep = np.arange(self.n) != i
        return AlignmentDataset(tuple(np.array(self.ids)[keep]), self.angles[keep],
                                self.present[keep], self.residue_classes)

    def __eq__(self, other):
        if not isinstance(other, AlignmentDataset):
            return NotImplemented
        return (self.ids == other.ids and self.residue_classes == other.residue_classes
                and np.array_equal(self.present, other.present)
                and np.array_equal(self.angles, other.angles, equal_nan=True))

    __hash__ = None
