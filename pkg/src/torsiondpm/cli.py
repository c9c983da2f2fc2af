"""Command line interface: ``torsiondpm <command> [options]``.

Commands: fit, density, sample, compare, diagnose, estimate-transitions.
Every command is deterministic given its input files, flags and ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dataset import AlignmentDataset
from .density import DEFAULT_RESOLUTION, PredictiveModel, candidate_array, marginal_grid, predictive_draws
from .evaluate import (armsd_many, bayes_factor, combined_log10_bf, cross_chain_grid_distance,
                       diagnostics_report, kass_category)
from .fileio import (FormatError, file_digest, load_dataset, load_prior_config, load_targets,
                     load_transition_file, prior_to_dict, read_fit, shipped_config, write_candidates,
                     write_fit, write_grid, write_json)
from .priors.hmm import STATES, estimate_transition_matrix
from .sampler import McmcConfig, SamplerError, run_chain

log = logging.getLogger("torsiondpm")

INIT_NAMES = {"single": "single-cluster", "singletons": "singletons"}
DEFAULT_CONFIGS = {"hmm": "hmm_general.yaml", "noninf": "noninformative.yaml",
                   "uniform": "noninformative.yaml"}


class CliError(Exception):
    """A user-facing failure; printed without a traceback."""


# ---------------------------------------------------------------- helpers

def _root_seed(seed) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed)


def _seed_value(seed) -> int:
    """The seed actually used; fresh entropy when none was given, so runs can be repeated."""
    return int(_root_seed(seed).entropy)


def _prior_digest(prior) -> str:
    return hashlib.sha256(json.dumps(prior_to_dict(prior), sort_keys=True).encode()).hexdigest()


def _chain_inits(chains: int, init: str | None) -> list:
    if init is not None:
        return [INIT_NAMES[init]] * chains
    # alternate the two starting points: single cluster, then all singletons
    return [("single-cluster", "singletons")[k % 2] for k in range(chains)]


def _build_prior(args):
    kind = args.prior
    path = args.prior_config
    if path is None:
        path = shipped_config(DEFAULT_CONFIGS[kind or "hmm"])
    cfg = load_prior_config(path)
    trans = load_transition_file(args.transitions) if getattr(args, "transitions", None) else None
    return cfg.build(kind, trans), str(path)


def _with_target_classes(data: AlignmentDataset, target_path, degrees: bool) -> AlignmentDataset:
    """Residue classes from the target wherever the target is observed."""
    ids, seqs, classes = load_targets(target_path, degrees, m=data.m)
    if len(ids) != 1:
        raise CliError(f"{target_path}: fit --target expects exactly one target sequence, found {len(ids)}")
    merged = tuple(t if seqs[0].present[j] else d
                   for j, (t, d) in enumerate(zip(classes[0], data.residue_classes)))
    return dataclasses.replace(data, residue_classes=merged)


def _run_one(job):
    data, config, prior, seed_seq = job
    return run_chain(data, config, prior, np.random.default_rng(seed_seq))


def _model(fit, mask) -> PredictiveModel:
    return PredictiveModel(tuple(fit.all_samples()), fit.n, fit.config.alpha0, fit.prior, mask,
                           fit.residue_classes)


def _target_mask(args, m: int):
    """Mask (and the parsed targets) from --target; all positions without one."""
    if not getattr(args, "target", None):
        return np.ones(m, dtype=bool), None
    ids, seqs, _ = load_targets(args.target, args.degrees, m=m)
    if getattr(args, "target_id", None):
        if args.target_id not in ids:
            raise CliError(f"{args.target}: no sequence with id {args.target_id!r}")
        k = ids.index(args.target_id)
    elif len(ids) == 1:
        k = 0
    else:
        raise CliError(f"{args.target} holds {len(ids)} sequences; choose one with --target-id")
    return seqs[k].present.copy(), (ids[k], seqs[k])


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    data = load_dataset(args.data, args.degrees)
    if args.exclude:
        missing = set(args.exclude) - set(data.ids)
        if missing:
            raise CliError(f"--exclude ids not in the data: {sorted(missing)}")
        for sid in args.exclude:
            data = data.without(data.ids.index(sid))
    if args.target:
        data = _with_target_classes(data, args.target, args.degrees)
    prior, prior_path = _build_prior(args)
    seed = _seed_value(args.seed)
    inits = _chain_inits(args.chains, args.init)
    mode = "hmm" if prior.uses_states else "noninformative"
    configs = [McmcConfig(alpha0=args.alpha0, iterations=args.iterations, burnin=args.burnin,
                          thin=args.thin, init_mode=init, prior_mode=mode, seed=seed) for init in inits]
    children = _root_seed(seed).spawn(args.chains)
    jobs = [(data, c, prior, s) for c, s in zip(configs, children)]
    log.info("fitting %d chains on %d sequences x %d positions", args.chains, data.n, data.m)
    if args.workers > 1 and args.chains > 1:
        with ProcessPoolExecutor(max_workers=min(args.workers, args.chains)) as pool:
            chains = list(pool.map(_run_one, jobs))
    else:
        chains = [_run_one(j) for j in jobs]
    manifest = {
        "command": "fit",
        "version": __version__,
        "dataset": {"path": str(args.data), "sha256": file_digest(args.data), "n": data.n, "m": data.m,
                    "ids": list(data.ids), "residue_classes": list(data.residue_classes),
                    "excluded": list(args.exclude or []),
                    "target": None if not args.target else str(args.target)},
        "prior_config": prior_path,
        "prior_sha256": _prior_digest(prior),
        "seed": seed,
        "config": dataclasses.asdict(configs[0]),
        "chains": [{"init_mode": c.init_mode, "retained": len(s)} for c, s in zip(configs, chains)],
    }
    out = write_fit(args.out, manifest, prior, chains)
    write_json({f"chain_{k}": diagnostics_report(s)[1] for k, s in enumerate(chains, start=1)},
               out / "diagnostics.json")
    total = sum(len(s) for s in chains)
    print(f"wrote {args.chains} chains, {total} retained samples to {out}")
    return 0


def cmd_density(args) -> int:
    fit = read_fit(args.fit)
    mask, target = _target_mask(args, fit.m)
    model = _model(fit, mask)
    seed = _seed_value(args.seed)
    draws = predictive_draws(model, args.draws, np.random.default_rng(seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files, masses = [], []
    for j in np.flatnonzero(mask):
        grid = marginal_grid(int(j), model, resolution=args.resolution, draws=draws)
        try:
            masses.append(grid.check_normalization())
        except ValueError as exc:
            raise CliError(f"quadrature self-check failed: {exc}") from None
        name = f"grid_pos{j + 1:03d}.txt"
        write_grid(grid, out / name)
        files.append(name)
    write_json({
        "command": "density",
        "fit": str(args.fit),
        "seed": seed,
        "draws": len(draws),
        "resolution": args.resolution,
        "prior_sha256": fit.manifest["prior_sha256"],
        "dataset_sha256": fit.manifest["dataset"]["sha256"],
        "chains": [{"file": f, **c} for f, c in zip(fit.manifest["chain_files"], fit.manifest["chains"])],
        "target": None if target is None else target[0],
        "positions": [int(j) + 1 for j in np.flatnonzero(mask)],
        "files": files,
        "masses": masses,
    }, out / "grid_meta.json")
    print(f"wrote {len(files)} grids to {out}")
    return 0


def cmd_sample(args) -> int:
    fit = read_fit(args.fit)
    mask, _ = _target_mask(args, fit.m)
    truth = None
    if args.truth:
        ids, seqs, _ = load_targets(args.truth, args.degrees, m=fit.m)
        if len(ids) != 1:
            raise CliError(f"{args.truth}: expected one truth sequence, found {len(ids)}")
        truth = seqs[0]
        if args.target and not np.array_equal(truth.present, mask):
            raise CliError("truth and target presence masks differ")
        mask = truth.present.copy()
    model = _model(fit, mask)
    seed = _seed_value(args.seed)
    cands = candidate_array(model, args.count, np.random.default_rng(seed))
    scores = armsd_many(cands, truth) if truth is not None else None
    write_candidates(args.out, cands, mask, scores, args.degrees)
    msg = f"wrote {args.count} candidates to {args.out}"
    if scores is not None:
        msg += f"; best aRMSD {scores.min():.4f} rad (candidate {int(np.argmin(scores)) + 1})"
    print(msg)
    return 0


def cmd_compare(args) -> int:
    f1, f2 = read_fit(args.fits[0]), read_fit(args.fits[1])
    if f1.m != f2.m:
        raise CliError(f"fits have different alignment lengths ({f1.m} and {f2.m})")
    ids, seqs, _ = load_targets(args.target, args.degrees, m=f1.m)
    names = tuple(args.ids) if args.ids else (str(args.fits[0]), str(args.fits[1]))
    seed = _seed_value(args.seed)
    seeds = _root_seed(seed).spawn(len(ids))
    rows = []
    results = []
    for sid, seq, s in zip(ids, seqs, seeds):
        if not seq.present.any():
            raise CliError(f"target {sid} has no observed positions")
        m1, m2 = _model(f1, seq.present), _model(f2, seq.present)
        res = bayes_factor(seq, m1, m2, args.draws, s, names)
        results.append(res)
        rows.append({"target": sid, "log10_bf": res.log10_bf, "kass_category": res.kass_category,
                     "log_density_m1": res.log_density_m1, "log_density_m2": res.log_density_m2,
                     "model_m1": names[0], "model_m2": names[1]})
    total = combined_log10_bf(results)
    combined = {"target": "combined", "log10_bf": total, "kass_category": kass_category(total),
                "log_density_m1": sum(r.log_density_m1 for r in results),
                "log_density_m2": sum(r.log_density_m2 for r in results),
                "model_m1": names[0], "model_m2": names[1]}
    out = Path(args.out)
    if out.suffix.lower() == ".csv":
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(combined), lineterminator="\n")
            w.writeheader()
            for row in rows + [combined]:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    else:
        draws = args.draws or _model(f1, np.ones(f1.m, dtype=bool)).default_draw_count
        write_json({"seed": seed, "draws": draws, "rows": rows, "combined": combined}, out)
    print(f"compared {len(rows)} targets; combined log10 Bayes factor {total:.3f} -> {out}")
    return 0


def cmd_diagnose(args) -> int:
    fit = read_fit(args.fit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for k, samples in enumerate(fit.chains, start=1):
        trace, summary = diagnostics_report(samples)
        summaries[f"chain_{k}"] = summary
        with open(out / f"trace_chain_{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "n_clusters", "entropy", "precision_acceptance", "means_acceptance"])
            for s in samples:
                w.writerow([s.iteration, s.n_clusters, repr(s.entropy),
                            _ratio(s.precision_accepted, s.precision_proposed),
                            _ratio(s.means_accepted, s.means_proposed)])
    distances = []
    seed = _seed_value(args.seed)
    if len(fit.chains) > 1:
        mask = np.ones(fit.m, dtype=bool)
        models = [PredictiveModel(tuple(c), fit.n, fit.config.alpha0, fit.prior, mask, fit.residue_classes)
                  for c in fit.chains]
        draws = [predictive_draws(mdl, args.draws, np.random.default_rng(s))
                 for mdl, s in zip(models, _root_seed(seed).spawn(len(models)))]
        for j in range(fit.m):
            grids = [marginal_grid(j, mdl, resolution=args.resolution, draws=d)
                     for mdl, d in zip(models, draws)]
            for a, b in combinations(range(len(grids)), 2):
                distances.append({"position": j + 1, "chain_a": a + 1, "chain_b": b + 1,
                                  "tv": cross_chain_grid_distance(grids[a], grids[b])})
    write_json({"seed": seed, "resolution": args.resolution, "chains": summaries,
                "cross_chain_tv": distances}, out / "diagnostics.json")
    worst = max((d["tv"] for d in distances), default=math.nan)
    print(f"wrote diagnostics for {len(fit.chains)} chains to {out}; max cross-chain TV {worst:.4f}")
    return 0


def _ratio(a: int, b: int) -> str:
    return repr(a / b) if b else ""


def cmd_estimate_transitions(args) -> int:
    with open(args.states) as fh:
        seqs = [line.strip() for line in fh if line.strip() and not line.lstrip().startswith("#")]
    mat = estimate_transition_matrix(seqs, args.pseudocount)
    doc = {"transition": {s: [float(v) for v in mat[k]] for k, s in enumerate(STATES)}}
    with open(args.out, "w") as fh:
        fh.write("# Transition matrix estimated from state strings; rows are the from-state.\n")
        yaml.safe_dump(doc, fh, default_flow_style=None, sort_keys=False)
    print(f"wrote transition matrix from {len(seqs)} state strings to {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def _nonneg_int(text: str) -> int:
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return val


def _positive_float(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torsiondpm", description="Dirichlet-process mixtures of sine models for aligned torsion angles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (recorded in outputs)")
    common.add_argument("--degrees", action="store_true", help="input and candidate angles in degrees")

    predictive = argparse.ArgumentParser(add_help=False)
    predictive.add_argument("--fit", required=True, help="directory written by `fit`")
    predictive.add_argument("--draws", type=_positive_int, default=None,
                            help="predictive draws (default: one per retained sample)")

    target = argparse.ArgumentParser(add_help=False)
    target.add_argument("--target", help="target sequence file; its observed positions form the mask")
    target.add_argument("--target-id", help="which sequence of a multi-sequence target file to use")

    f = sub.add_parser("fit", parents=[common], help="run the MCMC chains and persist retained samples")
    f.add_argument("--data", required=True, help="alignment file (id,position,residue_class,phi,psi)")
    f.add_argument("--prior-config", help="YAML prior config (default: a shipped config for --prior)")
    f.add_argument("--prior", choices=("hmm", "noninf", "uniform"), default=None,
                   help="centering prior (default: the config's own)")
    f.add_argument("--transitions", help="YAML transition matrix for the HMM prior")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--iterations", type=_positive_int, default=11_000)
    f.add_argument("--burnin", type=_nonneg_int, default=1_000)
    f.add_argument("--thin", type=_positive_int, default=20)
    f.add_argument("--alpha0", type=_positive_float, default=1.0)
    f.add_argument("--chains", type=_positive_int, default=2)
    f.add_argument("--init", choices=tuple(INIT_NAMES), default=None,
                   help="start every chain this way (default: alternate single, singletons)")
    f.add_argument("--exclude", nargs="+", metavar="ID", help="sequence ids to leave out")
    f.add_argument("--target", help="target file whose residue classes replace the family's "
                                    "at the target's observed positions")
    f.add_argument("--workers", type=_positive_int, default=1, help="processes for running chains")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("density", parents=[common, predictive, target],
                       help="predictive density grids, one file per target position")
    d.add_argument("--resolution", type=_positive_int, default=DEFAULT_RESOLUTION)
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_density)

    s = sub.add_parser("sample", parents=[common, predictive, target], help="draw candidate sequences")
    s.add_argument("--count", type=_positive_int, default=1000)
    s.add_argument("--truth", help="true sequence; adds per-candidate aRMSD and flags the best")
    s.add_argument("--out", required=True, help="candidates CSV")
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("compare", parents=[common], help="Bayes factors of two fits on target sequences")
    c.add_argument("--fits", nargs=2, required=True, metavar=("FIT1", "FIT2"))
    c.add_argument("--ids", nargs=2, metavar=("M1", "M2"), help="model names for the report")
    c.add_argument("--target", required=True, help="target sequences (one row each in the report)")
    c.add_argument("--draws", type=_positive_int, default=None)
    c.add_argument("--out", required=True, help="report file (.json or .csv)")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("diagnose", parents=[common],
                       help="traces, acceptance rates and cross-chain grid distances")
    g.add_argument("--fit", required=True)
    g.add_argument("--draws", type=_positive_int, default=None)
    g.add_argument("--resolution", type=_positive_int, default=DEFAULT_RESOLUTION)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_diagnose)

    t = sub.add_parser("estimate-transitions", help="transition matrix from H/E/T/C state strings")
    t.add_argument("--states", required=True, help="file with one state string per line")
    t.add_argument("--pseudocount", type=float, default=1.0)
    t.add_argument("--out", required=True, help="YAML output usable with --transitions")
    t.set_defaults(func=cmd_estimate_transitions)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "burnin", 0) and args.burnin >= args.iterations:
        parser.error("--burnin must be smaller than --iterations")
    try:
        return args.func(args)
    except (CliError, FormatError, SamplerError, FileNotFoundError, ValueError) as exc:
        print(f"torsiondpm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
