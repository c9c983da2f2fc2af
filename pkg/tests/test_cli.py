import csv
import json
import math

import numpy as np
import pytest
import yaml

from torsiondpm.cli import build_parser, main
from torsiondpm.fileio import read_candidates, read_fit, read_grid

import synthetic

FAST = ["--iterations", "60", "--burnin", "20", "--thin", "10"]


def alignment_rows(data):
    rows = []
    for i, sid in enumerate(data.ids):
        for j in range(data.m):
            if data.present[i, j]:
                rows.append((sid, j + 1, "GENERAL", *(repr(float(v)) for v in data.angles[i, j])))
            else:
                rows.append((sid, j + 1, "GENERAL", "NA", "NA"))
    return rows


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, _ = synthetic.planted_clusters(np.random.default_rng(11), n=8, m=3)
    aln = synthetic.write_alignment_csv(root / "aln.csv", alignment_rows(data))
    # ten targets, each observed at positions 1 and 3
    rng = np.random.default_rng(12)
    trows = []
    for k in range(10):
        for j in range(3):
            if j == 1:
                trows.append((f"t{k}", j + 1, "GENERAL", "NA", "NA"))
            else:
                trows.append((f"t{k}", j + 1, "GENERAL", *(repr(float(v)) for v in rng.uniform(-3, 3, 2))))
    targets = synthetic.write_alignment_csv(root / "targets.csv", trows)
    one = synthetic.write_alignment_csv(root / "one.csv", [r for r in trows if r[0] == "t0"])
    fit = root / "fit"
    assert main(["fit", "--data", str(aln), "--prior", "noninf", "--out", str(fit), "--seed", "1", *FAST]) == 0
    return {"root": root, "aln": aln, "targets": targets, "one": one, "fit": fit}


def test_parser_defaults():
    a = build_parser().parse_args(["fit", "--data", "x", "--out", "y"])
    assert (a.iterations, a.burnin, a.thin, a.alpha0, a.chains, a.workers) == (11_000, 1_000, 20, 1.0, 2, 1)
    d = build_parser().parse_args(["density", "--fit", "f", "--out", "o"])
    assert d.resolution == 360 and d.draws is None
    s = build_parser().parse_args(["sample", "--fit", "f", "--out", "o"])
    assert s.count == 1000


@pytest.mark.parametrize("argv", [["fit", "--data", "x", "--out", "y", "--thin", "0"],
                                  ["fit", "--data", "x", "--out", "y", "--alpha0", "-1"],
                                  ["fit", "--data", "x", "--out", "y", "--prior", "flat"]])
def test_bad_flags_exit(argv):
    with pytest.raises(SystemExit):
        build_parser().parse_args(argv)


def test_fit_outputs(files):
    fit = read_fit(files["fit"])
    assert len(fit.chains) == 2 and [len(c) for c in fit.chains] == [4, 4]
    assert [c["init_mode"] for c in fit.manifest["chains"]] == ["single-cluster", "singletons"]
    assert fit.manifest["seed"] == 1 and len(fit.manifest["prior_sha256"]) == 64
    diag = json.loads((files["fit"] / "diagnostics.json").read_text())
    assert set(diag) == {"chain_1", "chain_2"}


def test_fit_is_deterministic(files, tmp_path):
    out = tmp_path / "again"
    assert main(["fit", "--data", str(files["aln"]), "--prior", "noninf", "--out", str(out),
                 "--seed", "1", *FAST]) == 0
    for name in ("chain_1.jsonl", "chain_2.jsonl", "fit.json"):
        assert (out / name).read_bytes() == (files["fit"] / name).read_bytes()


def test_fit_single_chain_and_exclude(files, tmp_path):
    out = tmp_path / "one"
    assert main(["fit", "--data", str(files["aln"]), "--prior", "noninf", "--out", str(out), "--seed", "2",
                 "--chains", "1", "--init", "singletons", "--exclude", "s0", "s1",
                 "--iterations", "50", "--burnin", "10", "--thin", "4"]) == 0
    fit = read_fit(out)
    assert len(fit.chains) == 1 and len(fit.chains[0]) == 10 and fit.n == 6
    assert main(["fit", "--data", str(files["aln"]), "--prior", "noninf", "--out", str(out),
                 "--exclude", "nobody", *FAST]) == 1


def test_fit_hmm_needs_transition(files, tmp_path, capsys):
    assert main(["fit", "--data", str(files["aln"]), "--prior", "hmm", "--out", str(tmp_path / "h"), *FAST]) == 1
    assert "transition" in capsys.readouterr().err
    trans = tmp_path / "t.yaml"
    trans.write_text(yaml.safe_dump({"transition": synthetic.ILLUSTRATIVE_TRANSITION.tolist()}))
    assert main(["fit", "--data", str(files["aln"]), "--prior", "hmm", "--transitions", str(trans),
                 "--out", str(tmp_path / "h"), "--chains", "1", *FAST]) == 0
    assert read_fit(tmp_path / "h").prior.uses_states


def test_density_grids(files, tmp_path):
    out = tmp_path / "grids"
    assert main(["density", "--fit", str(files["fit"]), "--out", str(out), "--resolution", "90",
                 "--seed", "3"]) == 0
    names = sorted(p.name for p in out.glob("grid_pos*.txt"))
    assert names == ["grid_pos001.txt", "grid_pos002.txt", "grid_pos003.txt"]
    g = read_grid(out / "grid_pos002.txt")
    assert g.position == 1 and g.resolution == 90 and abs(g.total_mass() - 1) < 0.02
    meta = json.loads((out / "grid_meta.json").read_text())
    assert meta["resolution"] == 90 and meta["draws"] == 8 and meta["positions"] == [1, 2, 3]


def test_density_with_target_mask(files, tmp_path):
    out = tmp_path / "g"
    assert main(["density", "--fit", str(files["fit"]), "--out", str(out), "--resolution", "36",
                 "--target", str(files["targets"]), "--target-id", "t4"]) == 0
    assert sorted(p.name for p in out.glob("grid_pos*.txt")) == ["grid_pos001.txt", "grid_pos003.txt"]
    # a multi-sequence target needs --target-id
    assert main(["density", "--fit", str(files["fit"]), "--out", str(out),
                 "--target", str(files["targets"])]) == 1


def test_compare_same_fit_is_zero(files, tmp_path):
    out = tmp_path / "cmp.json"
    assert main(["compare", "--fits", str(files["fit"]), str(files["fit"]), "--target", str(files["targets"]),
                 "--ids", "A", "B", "--out", str(out), "--seed", "4"]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["rows"]) == 10 and rep["draws"] == 8
    assert all(r["log10_bf"] == 0.0 and r["kass_category"] == "negligible" for r in rep["rows"])
    assert rep["combined"]["log10_bf"] == 0.0


def test_compare_csv_rows(files, tmp_path):
    other = tmp_path / "fit2"
    assert main(["fit", "--data", str(files["aln"]), "--prior", "noninf", "--out", str(other), "--seed", "9",
                 "--alpha0", "5", *FAST]) == 0
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--fits", str(files["fit"]), str(other), "--target", str(files["targets"]),
                 "--out", str(out), "--draws", "50", "--seed", "4"]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 11 and rows[-1]["target"] == "combined"
    total = sum(float(r["log10_bf"]) for r in rows[:-1])
    assert float(rows[-1]["log10_bf"]) == pytest.approx(total)


def test_sample_candidates_and_truth(files, tmp_path):
    out = tmp_path / "c.csv"
    assert main(["sample", "--fit", str(files["fit"]), "--out", str(out), "--count", "40",
                 "--truth", str(files["one"]), "--seed", "5"]) == 0
    cands, scores = read_candidates(out, 3)
    assert cands.shape == (40, 3, 2) and np.isnan(cands[:, 1]).all()
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    best = [int(r["candidate"]) for r in rows if r["best"] == "1"]
    assert best == [int(np.argmin(scores)) + 1]
    assert np.all(scores >= 0) and np.all(scores <= math.pi)


def test_sample_mask_mismatch(files, tmp_path):
    full = synthetic.write_alignment_csv(tmp_path / "full.csv",
                                         [("x", j, "GENERAL", "0.1", "0.2") for j in (1, 2, 3)])
    assert main(["sample", "--fit", str(files["fit"]), "--out", str(tmp_path / "c.csv"),
                 "--target", str(full), "--truth", str(files["one"])]) == 1


def test_sample_degrees(files, tmp_path):
    out = tmp_path / "deg.csv"
    assert main(["sample", "--fit", str(files["fit"]), "--out", str(out), "--count", "30", "--degrees"]) == 0
    cands, _ = read_candidates(out, 3, degrees=True)
    assert np.all(np.abs(cands) <= math.pi)


def test_diagnose(files, tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", "--fit", str(files["fit"]), "--out", str(out), "--resolution", "36"]) == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert {(d["position"], d["chain_a"], d["chain_b"]) for d in rep["cross_chain_tv"]} == {
        (1, 1, 2), (2, 1, 2), (3, 1, 2)}
    assert all(0 <= d["tv"] <= 1 for d in rep["cross_chain_tv"])
    lines = (out / "trace_chain_1.csv").read_text().splitlines()
    assert lines[0].startswith("iteration,") and len(lines) == 5


def test_estimate_transitions_round_trip(files, tmp_path):
    states = tmp_path / "states.txt"
    states.write_text("# comment\nHHHHEEC\nCCTTHH\n")
    out = tmp_path / "trans.yaml"
    assert main(["estimate-transitions", "--states", str(states), "--out", str(out)]) == 0
    doc = yaml.safe_load(out.read_text())["transition"]
    assert list(doc) == ["H", "E", "T", "C"]
    np.testing.assert_allclose([sum(r) for r in doc.values()], 1.0)
    # the output feeds straight back into fit
    assert main(["fit", "--data", str(files["aln"]), "--prior", "hmm", "--transitions", str(out),
                 "--out", str(tmp_path / "f"), "--chains", "1", *FAST]) == 0


def test_missing_fit_and_bad_data(tmp_path, capsys):
    assert main(["density", "--fit", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err
    bad = synthetic.write_alignment_csv(tmp_path / "bad.csv", [("a", 1, "GENERAL", "0.1", "NA")])
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "o"), *FAST]) == 1
    assert "bad.csv:2" in capsys.readouterr().err


def test_burnin_must_be_below_iterations(tmp_path):
    with pytest.raises(SystemExit):
        main(["fit", "--data", "x", "--out", str(tmp_path), "--iterations", "10", "--burnin", "10"])
