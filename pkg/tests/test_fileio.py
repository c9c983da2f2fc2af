import logging
import math
import re
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from torsiondpm import AlignmentDataset, McmcConfig, run_chain
from torsiondpm.density import DensityGrid
from torsiondpm.fileio import (FormatError, load_dataset, load_prior_config, load_targets,
                               load_transition_file, prior_from_dict, prior_to_dict, read_candidates,
                               read_chain, read_fit, read_grid, save_dataset, shipped_config,
                               write_candidates, write_chain, write_fit, write_grid)
from torsiondpm.priors import HMMPrior, NoninformativePrior, SineMixture
from torsiondpm.priors.hmm import STATES

from synthetic import ILLUSTRATIVE_TRANSITION, write_alignment_csv

FIXTURES = Path(__file__).parent / "fixtures" / "malformed"

FIGURE2 = {
    "C": [[0.625, -2.0, 2.5, 4.0, 4.0, 0.0], [0.208, -1.0, 2.5, 21.33, 21.33, -10.67],
          [0.125, -2.0, 0.0, 6.25, 6.25, 0.0], [0.043, 1.0, 1.0, 12.21, 12.21, -3.66]],
    "H": [[1.0, -1.0, -0.5, 21.33, 21.33, 10.67]],
    "T": [[0.8, -1.2, -0.2, 8.33, 8.33, -4.17], [0.1, -1.0, 2.5, 21.33, 21.33, -10.67],
          [0.1, 1.0, 0.6, 33.33, 8.33, -8.33]],
    "E": [[1.0, -2.0, 2.5, 5.33, 21.33, 5.33]],
}


# ---------------------------------------------------------------- alignments

def test_na_cell_gives_single_zero(tmp_path):
    f = write_alignment_csv(tmp_path / "a.csv", [
        ("a", 1, "GENERAL", 0.1, 0.2), ("a", 2, "GENERAL", 0.3, 0.4),
        ("b", 1, "GENERAL", "NA", "NA"), ("b", 2, "GENERAL", -0.3, 1.0),
        ("c", 1, "GENERAL", 1.0, 2.0), ("c", 2, "GENERAL", 0.0, 0.0)])
    data = load_dataset(f)
    assert data.present.shape == (3, 2)
    assert (~data.present).sum() == 1 and not data.present[1, 0]
    assert data.ids == ("a", "b", "c")


def test_omitted_row_equals_na_row(tmp_path):
    rows = [("a", 1, "GENERAL", 0.1, 0.2), ("a", 2, "GENERAL", 0.3, 0.4), ("b", 2, "GENERAL", 1.0, 1.0)]
    omitted = load_dataset(write_alignment_csv(tmp_path / "o.csv", rows))
    na = load_dataset(write_alignment_csv(tmp_path / "n.csv", rows + [("b", 1, "GENERAL", "", "")]))
    assert omitted == na


def test_angles_wrapped_and_degrees(tmp_path):
    f = write_alignment_csv(tmp_path / "a.csv", [("a", 1, "GENERAL", 3 * math.pi, -3 * math.pi)])
    assert load_dataset(f).angles[0, 0].tolist() == pytest.approx([math.pi, math.pi])
    g = write_alignment_csv(tmp_path / "d.csv", [("a", 1, "GENERAL", -60, 270)])
    assert load_dataset(g, degrees=True).angles[0, 0].tolist() == pytest.approx(
        [-math.pi / 3, -math.pi / 2])


def test_comments_blank_lines_and_majority_class(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("# header comment\n\nid,position,residue_class,phi,psi\n"
                 "a,1,GLY,0,0\nb,1,GLY,0,0\nc,1,GENERAL,0,0\n# trailing\nc,2,PRO,0,0\n")
    data = load_dataset(f)
    assert data.residue_classes == ("GLY", "PRO")


def test_sequence_without_observations_is_dropped(tmp_path, caplog):
    f = write_alignment_csv(tmp_path / "a.csv", [("a", 1, "GENERAL", 0.1, 0.2), ("b", 1, "GENERAL", "NA", "NA")])
    with caplog.at_level(logging.WARNING):
        data = load_dataset(f)
    assert data.ids == ("a",) and "b" in caplog.text
    with pytest.raises(ValueError):
        load_dataset(f, drop_empty=False)


@pytest.mark.parametrize("fixture", sorted(FIXTURES.glob("*.csv")), ids=lambda p: p.stem)
def test_malformed_fixture_rejected_with_line_number(fixture):
    expect = re.search(r"expect-line: (\d+)", fixture.read_text()).group(1)
    with pytest.raises(FormatError, match=rf"{re.escape(str(fixture))}:{expect}:"):
        load_dataset(fixture)


def test_empty_file_rejected(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("# nothing\n")
    with pytest.raises(FormatError):
        load_dataset(f)


finite = st.floats(-math.pi, math.pi, allow_nan=False).filter(lambda v: v > -math.pi)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_save_load_round_trip(tmp_path, n, m, data):
    angles = np.array(data.draw(st.lists(finite, min_size=n * m * 2, max_size=n * m * 2))).reshape(n, m, 2)
    present = np.array(data.draw(st.lists(st.booleans(), min_size=n * m, max_size=n * m))).reshape(n, m)
    present[:, 0] = True
    classes = tuple(data.draw(st.lists(st.sampled_from(["GENERAL", "GLY", "PRO"]), min_size=m, max_size=m)))
    ds = AlignmentDataset(tuple(f"p{i}" for i in range(n)), angles, present, classes)
    path = tmp_path / "rt.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    save_dataset(back, path)
    assert load_dataset(path) == ds


def test_targets_padded_to_model_length(tmp_path):
    f = write_alignment_csv(tmp_path / "t.csv", [("t", 1, "GLY", 0.1, 0.2)])
    ids, seqs, classes = load_targets(f, m=3)
    assert ids == ["t"] and len(seqs[0]) == 3
    assert seqs[0].present.tolist() == [True, False, False]
    assert classes[0] == ("GLY", "GENERAL", "GENERAL")
    with pytest.raises(FormatError):
        load_targets(write_alignment_csv(tmp_path / "u.csv", [("t", 5, "GLY", 0.1, 0.2)]), m=3)


# ---------------------------------------------------------------- prior configs

def test_shipped_hmm_config_matches_published_tables():
    cfg = load_prior_config(shipped_config("hmm_general.yaml"))
    assert cfg.kind == "hmm" and cfg.transition is None
    table = cfg.emissions.table("GENERAL")
    for state, rows in FIGURE2.items():
        total = sum(r[0] for r in rows)
        got = table[state].as_rows()
        assert len(got) == len(rows)
        for g, r in zip(got, rows):
            assert g[0] == pytest.approx(r[0] / total)
            assert g[1:] == pytest.approx(r[1:])
    np.testing.assert_allclose(cfg.wishart.b, 0.25 * np.eye(2))
    assert cfg.wishart.dof == 1.0


def test_shipped_noninformative_config():
    prior = load_prior_config(shipped_config("noninformative.yaml")).build()
    assert isinstance(prior, NoninformativePrior)
    h = prior.h1
    assert (h.mu, h.nu, h.kappa1, h.kappa2, h.lam) == (0.0, 0.0, 0.1, 0.1, 0.0)
    assert prior.wishart.dof == 1.0
    np.testing.assert_allclose(prior.wishart.b, np.diag([0.25, 0.25]))


def test_illustrative_config_builds_hmm_with_stationary_start():
    prior = load_prior_config(shipped_config("hmm_illustrative.yaml")).build()
    assert isinstance(prior, HMMPrior)
    np.testing.assert_allclose(prior.hmm.transition, ILLUSTRATIVE_TRANSITION)
    pi = prior.hmm.initial
    np.testing.assert_allclose(pi @ prior.hmm.transition, pi, atol=1e-12)


def test_config_weights_1001_renormalized_with_warning(tmp_path, caplog):
    doc = {"prior": "hmm", "emissions": {"GENERAL": FIGURE2}}
    f = tmp_path / "p.yaml"
    f.write_text(yaml.safe_dump(doc))
    with caplog.at_level(logging.WARNING):
        cfg = load_prior_config(f)
    assert "1.001" in caplog.text
    assert sum(cfg.emissions.emission("C").weights) == pytest.approx(1.0, abs=1e-15)


def _config(tmp_path, **extra):
    doc = {"prior": "hmm", "emissions": {"GENERAL": FIGURE2}}
    doc.update(extra)
    f = tmp_path / "p.yaml"
    f.write_text(yaml.safe_dump(doc))
    return f


def test_config_errors(tmp_path):
    bad_rows = ILLUSTRATIVE_TRANSITION.tolist()
    bad_rows[2] = [0.5, 0.5, 0.5, 0.5]
    with pytest.raises(ValueError, match="do not sum to 1"):
        load_prior_config(_config(tmp_path, transition=bad_rows))
    with pytest.raises(ValueError, match="positive definite"):
        load_prior_config(_config(tmp_path, wishart={"dof": 1, "scale": [[1, 2], [2, 1]]}))
    off = {s: r for s, r in FIGURE2.items()}
    off["T"] = [[0.8, -1.2, -0.2, 8.33, 8.33, -4.17], [0.1, -1.0, 2.5, 21.33, 21.33, -10.67]]
    with pytest.raises(ValueError):
        load_prior_config(_config(tmp_path, emissions={"GENERAL": off}))
    with pytest.raises(ValueError, match="transition"):
        load_prior_config(_config(tmp_path)).build()


def test_transition_rounding_absorbed(tmp_path):
    rows = {s: r for s, r in zip(STATES, ILLUSTRATIVE_TRANSITION.tolist())}
    rows["H"] = [0.9, 0.01, 0.05, 0.0400001]
    cfg = load_prior_config(_config(tmp_path, transition=rows))
    np.testing.assert_allclose(cfg.transition.sum(axis=1), 1.0, atol=1e-15)


def test_prior_dict_round_trip(hmm_prior, noninf_prior):
    for prior in (hmm_prior, noninf_prior):
        back = prior_from_dict(prior_to_dict(prior))
        assert prior_to_dict(back) == prior_to_dict(prior)
    flat = load_prior_config(shipped_config("noninformative.yaml")).build("uniform")
    assert prior_from_dict(prior_to_dict(flat)).h1 is None


def test_transition_file(tmp_path):
    f = tmp_path / "t.yaml"
    f.write_text(yaml.safe_dump({"transition": {s: r for s, r in zip(STATES, ILLUSTRATIVE_TRANSITION.tolist())}}))
    np.testing.assert_allclose(load_transition_file(f), ILLUSTRATIVE_TRANSITION)
    f.write_text(yaml.safe_dump(ILLUSTRATIVE_TRANSITION.tolist()))
    np.testing.assert_allclose(load_transition_file(f), ILLUSTRATIVE_TRANSITION)


# ---------------------------------------------------------------- fits, grids, candidates

def test_chain_and_fit_round_trip(tmp_path, small_data, hmm_prior):
    cfg = McmcConfig(iterations=30, burnin=10, thin=5, seed=1)
    samples = run_chain(small_data, cfg, hmm_prior)
    write_chain(samples, tmp_path / "c.jsonl")
    back = read_chain(tmp_path / "c.jsonl")
    assert len(back) == len(samples) == 4
    for a, b in zip(samples, back):
        assert a.iteration == b.iteration and a.entropy == b.entropy
        np.testing.assert_array_equal(a.state.means, b.state.means)
        np.testing.assert_array_equal(a.state.omegas, b.state.omegas)
        np.testing.assert_array_equal(a.state.states, b.state.states)
        np.testing.assert_array_equal(a.state.labels, b.state.labels)
    manifest = {"dataset": {"n": small_data.n, "m": small_data.m,
                            "residue_classes": list(small_data.residue_classes)},
                "config": {"alpha0": 1.0, "iterations": 30, "burnin": 10, "thin": 5,
                           "init_mode": "single-cluster", "prior_mode": "hmm", "seed": 1}}
    write_fit(tmp_path / "fit", manifest, hmm_prior, [samples, samples])
    fit = read_fit(tmp_path / "fit")
    assert fit.config == cfg
    assert len(fit.all_samples()) == 8 and fit.n == small_data.n and fit.m == small_data.m
    with pytest.raises(FileNotFoundError):
        read_fit(tmp_path / "missing")


def test_grid_round_trip(tmp_path):
    g = DensityGrid(2, 5, np.random.default_rng(0).normal(size=(5, 5)))
    write_grid(g, tmp_path / "g.txt")
    back = read_grid(tmp_path / "g.txt")
    assert back.position == 2 and back.resolution == 5
    np.testing.assert_array_equal(back.log_density, g.log_density)


def test_candidates_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mask = np.array([True, False, True])
    cands = rng.uniform(-3, 3, (4, 3, 2))
    cands[:, ~mask] = np.nan
    scores = rng.random(4)
    write_candidates(tmp_path / "c.csv", cands, mask, scores)
    back, s = read_candidates(tmp_path / "c.csv", 3)
    np.testing.assert_array_equal(back, cands)
    np.testing.assert_array_equal(s, scores)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    flags = [int(line.split(",")[2]) for line in lines[1:]]
    assert flags[int(np.argmin(scores))] == 1 and sum(flags) == 1
