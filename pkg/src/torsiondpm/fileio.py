"""Readers and writers: alignments, prior configs, fitted chains, grids, reports.

Alignment files are comma-separated with the header
``id,position,residue_class,phi,psi``; one row per (sequence, position),
positions 1-based. An absent cell is either an omitted row or a row whose
angles are empty or ``NA``. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dataset import AlignmentDataset, AngleSequence
from .density import DensityGrid
from .priors.centering import HMMPrior, NoninformativePrior
from .priors.hmm import RESIDUE_CLASSES, STATES, ResiduePriorSet, SecondaryStructureHMM
from .priors.mixture import SineMixture
from .priors.wishart import WishartPrior
from .sampler import ClusterState, McmcConfig, PosteriorSample
from .torus import SineModelParams, grid_centers, wrap_angle

log = logging.getLogger(__name__)

HEADER = ("id", "position", "residue_class", "phi", "psi")
MISSING = {"", "NA"}
FIT_FORMAT = "torsiondpm-fit/1"
GRID_FORMAT = "torsiondpm-grid/1"
TRANSITION_TOL = 1e-6


class FormatError(ValueError):
    """Malformed input; the message carries the file and line number."""


# ---------------------------------------------------------------- alignments

def _rows(path: Path):
    with open(path, newline="") as fh:
        lines = ((k, line) for k, line in enumerate(fh, start=1)
                 if line.strip() and not line.lstrip().startswith("#"))
        first = next(lines, None)
        if first is None:
            raise FormatError(f"{path}: empty file")
        head = [h.strip().lower() for h in next(csv.reader([first[1]]))]
        if tuple(head) != HEADER:
            raise FormatError(f"{path}:{first[0]}: header must be {','.join(HEADER)}")
        for k, line in lines:
            yield k, [c.strip() for c in next(csv.reader([line]))]


def _angle(text: str, where: str, degrees: bool):
    if text in MISSING:
        return None
    try:
        val = float(text)
    except ValueError:
        raise FormatError(f"{where}: angle {text!r} is not a number") from None
    if not math.isfinite(val):
        raise FormatError(f"{where}: angle {text!r} is not finite")
    return float(wrap_angle(math.radians(val) if degrees else val))


def load_sequences(path, degrees: bool = False):
    """Parse an alignment file into (ids, angles, present, per-row classes, m)."""
    path = Path(path)
    cells = {}
    classes: dict = {}
    order: list = []
    m = 0
    for k, row in _rows(path):
        where = f"{path}:{k}"
        if len(row) != len(HEADER):
            raise FormatError(f"{where}: expected {len(HEADER)} fields, got {len(row)}")
        sid, pos_text, cls_name, phi_text, psi_text = row
        if not sid:
            raise FormatError(f"{where}: empty sequence id")
        try:
            pos = int(pos_text)
        except ValueError:
            raise FormatError(f"{where}: position {pos_text!r} is not an integer") from None
        if pos < 1:
            raise FormatError(f"{where}: positions are 1-based, got {pos}")
        cls_name = cls_name.upper() or "GENERAL"
        if cls_name not in RESIDUE_CLASSES and cls_name not in MISSING:
            raise FormatError(f"{where}: residue class {cls_name!r} not in {RESIDUE_CLASSES}")
        phi = _angle(phi_text, where, degrees)
        psi = _angle(psi_text, where, degrees)
        if (phi is None) != (psi is None):
            raise FormatError(f"{where}: present cell needs both phi and psi")
        if (sid, pos) in cells:
            raise FormatError(f"{where}: duplicate entry for ({sid}, {pos})")
        if sid not in classes:
            order.append(sid)
            classes[sid] = {}
        cells[(sid, pos)] = None if phi is None else (phi, psi)
        if cls_name not in MISSING:
            classes[sid][pos] = cls_name
        m = max(m, pos)
    if not order:
        raise FormatError(f"{path}: no data rows")
    n = len(order)
    angles = np.full((n, m, 2), np.nan)
    present = np.zeros((n, m), dtype=bool)
    for i, sid in enumerate(order):
        for j in range(m):
            val = cells.get((sid, j + 1))
            if val is not None:
                angles[i, j] = val
                present[i, j] = True
    return order, angles, present, classes, m


def _majority_classes(classes: dict, m: int) -> tuple:
    out = []
    for j in range(1, m + 1):
        votes = Counter(c[j] for c in classes.values() if j in c)
        if not votes:
            out.append("GENERAL")
            continue
        top = max(votes.values())
        out.append(min((c for c, v in votes.items() if v == top), key=RESIDUE_CLASSES.index))
    return tuple(out)


def load_dataset(path, degrees: bool = False, drop_empty: bool = True) -> AlignmentDataset:
    """Read an alignment; the residue class of a position is its majority class.

    Sequences with no observed positions are dropped with a warning when
    ``drop_empty`` is set, otherwise rejected.
    """
    ids, angles, present, classes, m = load_sequences(path, degrees)
    keep = present.any(axis=1)
    if not keep.any():
        raise FormatError(f"{path}: no observed angle pairs")
    if drop_empty and not keep.all():
        log.warning("dropping sequences with no observed positions: %s",
                    [s for s, k in zip(ids, keep) if not k])
        ids = [s for s, k in zip(ids, keep) if k]
        angles, present = angles[keep], present[keep]
    return AlignmentDataset(tuple(ids), angles, present, _majority_classes(classes, m))


def load_targets(path, degrees: bool = False, m: int | None = None):
    """Target sequences as (ids, [AngleSequence], per-target residue classes)."""
    ids, angles, present, classes, m_file = load_sequences(path, degrees)
    m = m_file if m is None else m
    if m_file > m:
        raise FormatError(f"{path}: targets have {m_file} positions, the model has {m}")
    pad = m - m_file
    if pad:
        angles = np.concatenate([angles, np.full((len(ids), pad, 2), np.nan)], axis=1)
        present = np.concatenate([present, np.zeros((len(ids), pad), dtype=bool)], axis=1)
    seqs = [AngleSequence(a, p) for a, p in zip(angles, present)]
    cls = [tuple(classes[s].get(j, "GENERAL") for j in range(1, m + 1)) for s in ids]
    return ids, seqs, cls


def save_dataset(data: AlignmentDataset, path, degrees: bool = False) -> None:
    """Write every cell, absent ones with NA angles."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for i, sid in enumerate(data.ids):
            for j in range(data.m):
                if data.present[i, j]:
                    phi, psi = data.angles[i, j]
                    if degrees:
                        phi, psi = math.degrees(phi), math.degrees(psi)
                    vals = [repr(float(phi)), repr(float(psi))]
                else:
                    vals = ["NA", "NA"]
                w.writerow([sid, j + 1, data.residue_classes[j], *vals])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- prior configs

@dataclass(frozen=True)
class PriorConfig:
    """Parsed prior configuration; ``build`` turns it into a centering prior."""

    kind: str
    wishart: WishartPrior
    h1: SineModelParams | None = None
    uniform: bool = False
    emissions: ResiduePriorSet | None = None
    transition: np.ndarray | None = None

    def build(self, kind: str | None = None, transition=None):
        """``kind`` is one of hmm, noninf, uniform (default: the config's own)."""
        kind = kind or ("hmm" if self.kind == "hmm" else ("uniform" if self.uniform else "noninf"))
        if kind == "uniform":
            return NoninformativePrior(None, self.wishart)
        if kind == "noninf":
            h1 = self.h1 if (self.h1 is not None or self.uniform) else SineModelParams(0.0, 0.0, 0.1, 0.1)
            return NoninformativePrior(h1, self.wishart)
        if kind != "hmm":
            raise ValueError(f"unknown prior kind {kind!r}")
        if self.emissions is None:
            raise ValueError("the HMM prior needs emission tables in the prior config")
        trans = self.transition if transition is None else np.asarray(transition, dtype=float)
        if trans is None:
            raise ValueError("the HMM prior needs a transition matrix: add a `transition:` block, "
                             "pass --transitions, or run estimate-transitions")
        return HMMPrior(SecondaryStructureHMM(trans, self.emissions), self.wishart)


def _wishart_from(d) -> WishartPrior:
    if d is None:
        return WishartPrior.diagonal(1.0, 0.25)
    scale = d.get("scale", [[0.25, 0.0], [0.0, 0.25]])
    if np.ndim(scale) == 0:
        scale = [[scale, 0.0], [0.0, scale]]
    return WishartPrior(float(d.get("dof", 1.0)), tuple(map(tuple, scale)))


def parse_transition(d) -> np.ndarray:
    if isinstance(d, dict):
        missing = [s for s in STATES if s not in d]
        if missing:
            raise ValueError(f"transition rows missing for states {missing}")
        rows = [d[s] for s in STATES]
    else:
        rows = d
    mat = np.asarray(rows, dtype=float)
    if mat.shape != (4, 4):
        raise ValueError("transition matrix must be 4 x 4 in the order H, E, T, C")
    sums = mat.sum(axis=1)
    if np.all(mat >= 0) and np.all(np.abs(sums - 1.0) <= TRANSITION_TOL):
        mat = mat / sums[:, None]  # absorb rounding in hand-typed rows
    return mat


def prior_config_from_dict(d: dict) -> PriorConfig:
    if not isinstance(d, dict):
        raise ValueError("prior config must be a mapping")
    kind = d.get("prior", "hmm" if "emissions" in d else "noninformative")
    wishart = _wishart_from(d.get("wishart"))
    if kind == "noninformative":
        h1 = d.get("h1", "uniform")
        if h1 == "uniform":
            return PriorConfig(kind, wishart, None, True)
        params = SineModelParams(h1.get("mu", 0.0), h1.get("nu", 0.0), h1["kappa1"], h1["kappa2"],
                                 h1.get("lambda", 0.0))
        return PriorConfig(kind, wishart, params)
    if kind != "hmm":
        raise ValueError(f"unknown prior {kind!r}; expected hmm or noninformative")
    tables = {}
    for cls_name, table in (d.get("emissions") or {}).items():
        tables[cls_name.upper()] = {s.upper(): SineMixture.from_rows(rows) for s, rows in table.items()}
    emissions = ResiduePriorSet(tables)
    trans = parse_transition(d["transition"]) if d.get("transition") is not None else None
    if trans is not None:
        SecondaryStructureHMM(trans, emissions)  # validate now rather than at fit time
    return PriorConfig(kind, wishart, emissions=emissions, transition=trans)


def load_prior_config(path) -> PriorConfig:
    """Read a YAML prior config (see the shipped files for the layout)."""
    with open(path) as fh:
        return prior_config_from_dict(yaml.safe_load(fh))


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package: hmm_general.yaml, hmm_illustrative.yaml,
    noninformative.yaml."""
    return Path(str(resources.files("torsiondpm") / "data" / name))


def load_transition_file(path) -> np.ndarray:
    with open(path) as fh:
        d = yaml.safe_load(fh)
    return parse_transition(d["transition"] if isinstance(d, dict) and "transition" in d else d)


def prior_to_dict(prior) -> dict:
    """Serializable form of a centering prior; round-trips through prior_from_dict."""
    w = {"dof": prior.wishart.dof, "scale": [list(r) for r in prior.wishart.scale_b]}
    if isinstance(prior, NoninformativePrior):
        h = prior.h1
        h1 = "uniform" if h is None else {"mu": h.mu, "nu": h.nu, "kappa1": h.kappa1,
                                          "kappa2": h.kappa2, "lambda": h.lam}
        return {"prior": "noninformative", "h1": h1, "wishart": w}
    emis = {c: {s: t[s].as_rows() for s in STATES} for c, t in prior.hmm.emissions.tables.items()}
    return {"prior": "hmm", "wishart": w, "emissions": emis,
            "transition": {s: prior.hmm.transition[k].tolist() for k, s in enumerate(STATES)}}


def prior_from_dict(d: dict):
    cfg = prior_config_from_dict(d)
    return cfg.build()


# ---------------------------------------------------------------- fitted chains

def sample_to_dict(s: PosteriorSample) -> dict:
    st = s.state
    return {
        "iteration": s.iteration,
        "labels": st.labels.tolist(),
        "means": st.means.tolist(),
        "omegas": st.omegas.tolist(),
        "states": None if st.states is None else st.states.tolist(),
        "n_clusters": s.n_clusters,
        "entropy": s.entropy,
        "precision_accepted": s.precision_accepted,
        "precision_proposed": s.precision_proposed,
        "means_accepted": s.means_accepted,
        "means_proposed": s.means_proposed,
    }


def sample_from_dict(d: dict) -> PosteriorSample:
    st = ClusterState(np.array(d["labels"], dtype=np.int64), np.array(d["means"], dtype=float),
                      np.array(d["omegas"], dtype=float),
                      None if d["states"] is None else np.array(d["states"], dtype=np.int64))
    return PosteriorSample(d["iteration"], st, d["n_clusters"], d["entropy"],
                           d["precision_accepted"], d["precision_proposed"],
                           d["means_accepted"], d["means_proposed"])


def write_chain(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_dict(s)) + "\n")


def read_chain(path) -> list:
    with open(path) as fh:
        return [sample_from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class FitResult:
    """A fitted run as stored on disk."""

    manifest: dict
    prior: object
    chains: list  # list of lists of PosteriorSample

    @property
    def config(self) -> McmcConfig:
        return McmcConfig(**self.manifest["config"])

    @property
    def n(self) -> int:
        return int(self.manifest["dataset"]["n"])

    @property
    def m(self) -> int:
        return int(self.manifest["dataset"]["m"])

    @property
    def residue_classes(self) -> tuple:
        return tuple(self.manifest["dataset"]["residue_classes"])

    def all_samples(self) -> list:
        return [s for chain in self.chains for s in chain]


def write_fit(out_dir, manifest: dict, prior, chains) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["format"] = FIT_FORMAT
    manifest["prior"] = prior_to_dict(prior)
    files = []
    for k, samples in enumerate(chains, start=1):
        name = f"chain_{k}.jsonl"
        write_chain(samples, out / name)
        files.append(name)
    manifest["chain_files"] = files
    with open(out / "fit.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_fit(fit_dir) -> FitResult:
    d = Path(fit_dir)
    path = d / "fit.json"
    if not path.exists():
        raise FileNotFoundError(f"no fit found at {d} (missing fit.json)")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FIT_FORMAT:
        raise FormatError(f"{path}: unsupported fit format {manifest.get('format')!r}")
    chains = [read_chain(d / name) for name in manifest["chain_files"]]
    return FitResult(manifest, prior_from_dict(manifest["prior"]), chains)


def config_dict(config: McmcConfig) -> dict:
    return asdict(config)


# ---------------------------------------------------------------- grids

def write_grid(grid: DensityGrid, path) -> None:
    """Header lines then G rows (phi) of G log-density values (psi), row-major."""
    g = grid.resolution
    with open(path, "w") as fh:
        fh.write(f"# {GRID_FORMAT}\n")
        fh.write(f"# position: {grid.position + 1}\n")
        fh.write(f"# resolution: {g}\n")
        fh.write("# rows: phi, columns: psi, radians, cell centres -pi + (k + 0.5) * 2pi / G\n")
        fh.write("# values: natural log of the predictive density\n")
        for row in grid.log_density:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def read_grid(path) -> DensityGrid:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip():
                rows.append([float(v) for v in line.split()])
    if "position" not in meta or "resolution" not in meta:
        raise FormatError(f"{path}: missing grid header")
    return DensityGrid(int(meta["position"]) - 1, int(meta["resolution"]), np.array(rows))


def grid_axes(resolution: int) -> np.ndarray:
    return grid_centers(resolution)


# ---------------------------------------------------------------- reports

def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_candidates(path, candidates: np.ndarray, mask, scores=None, degrees: bool = False) -> None:
    """One row per candidate: index, aRMSD (blank without a truth), best flag, angles."""
    j = np.flatnonzero(mask)
    best = int(np.argmin(scores)) if scores is not None else -1
    conv = math.degrees if degrees else float
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", "armsd", "best"]
                   + [f"{a}_{p + 1}" for p in j for a in ("phi", "psi")])
        for k, cand in enumerate(candidates):
            score = "" if scores is None else repr(float(scores[k]))
            angles = [repr(conv(float(v))) for p in j for v in cand[p]]
            w.writerow([k + 1, score, int(k == best), *angles])


def read_candidates(path, m: int, degrees: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_candidates: (candidates (count, m, 2), aRMSD or NaN)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        cols = [(int(h.split("_")[1]) - 1, 0 if h.startswith("phi") else 1) for h in head[3:]]
        rows = list(r)
    out = np.full((len(rows), m, 2), np.nan)
    scores = np.full(len(rows), np.nan)
    for k, row in enumerate(rows):
        if row[1]:
            scores[k] = float(row[1])
        for (p, a), v in zip(cols, row[3:]):
            out[k, p, a] = math.radians(float(v)) if degrees else float(v)
    return out, scores


__all__ = [
    "FitResult",
    "FormatError",
    "PriorConfig",
    "file_digest",
    "load_dataset",
    "load_prior_config",
    "load_targets",
    "load_transition_file",
    "prior_from_dict",
    "prior_to_dict",
    "read_candidates",
    "read_chain",
    "read_fit",
    "read_grid",
    "save_dataset",
    "shipped_config",
    "write_candidates",
    "write_chain",
    "write_fit",
    "write_grid",
    "write_json",
]
