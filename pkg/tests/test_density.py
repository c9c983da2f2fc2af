import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from torsiondpm import AngleSequence, ClusterState, PosteriorSample
from torsiondpm.density import (DensityGrid, PredictiveModel, candidate_array, conditional_logdensity,
                                estimate_joint_logdensity, joint_log_terms, log_mean_exp, marginal_grid,
                                mixture_log_grid, monte_carlo_se, predictive_draws,
                                sample_candidate_sequences)
from torsiondpm.sampler import sequence_log_likelihood
from torsiondpm.torus import SineModelParams, grid_centers, sine_log_density


def make_sample(labels, means, omegas, states=None, it=1):
    cs = ClusterState(np.array(labels), np.array(means, float), np.array(omegas, float), states)
    return PosteriorSample(it, cs, cs.n_clusters, 0.0)


M = 2
MEANS = [[[-1.0, 2.0], [0.5, 0.5]], [[1.5, -0.5], [-2.0, 2.5]]]
OMEGAS = [[[8.0, 1.0, 6.0], [5.0, 0.0, 5.0]], [[10.0, -2.0, 9.0], [4.0, 0.5, 7.0]]]


@pytest.fixture
def model(noninf_prior):
    s = make_sample([0, 0, 0, 1], MEANS, OMEGAS)
    return PredictiveModel((s,), 4, 1.0, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)


def test_predictive_mixture_weights(model):
    d = predictive_draws(model, 50_000, np.random.default_rng(0))
    assert np.mean(d.fresh) == pytest.approx(1 / 5, abs=0.006)
    first = np.all(d.means == np.array(MEANS[0]), axis=(1, 2))
    second = np.all(d.means == np.array(MEANS[1]), axis=(1, 2))
    assert np.mean(first) == pytest.approx(3 / 5, abs=0.007)
    assert np.mean(second) == pytest.approx(1 / 5, abs=0.006)
    assert not np.any(first & d.fresh)


def test_draws_cycle_over_samples(noninf_prior):
    samples = tuple(make_sample([0, 0], MEANS[:1], OMEGAS[:1], it=t) for t in range(3))
    mdl = PredictiveModel(samples, 2, 1.0, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)
    d = predictive_draws(mdl, 7, np.random.default_rng(1))
    assert d.sample_index.tolist() == [0, 1, 2, 0, 1, 2, 0]
    assert mdl.default_draw_count == 3


def test_prior_only_model_draws_fresh(noninf_prior):
    mdl = PredictiveModel((), 0, 1.0, noninf_prior, np.ones(3, bool), ("GENERAL",) * 3)
    d = predictive_draws(mdl, 10, np.random.default_rng(0))
    assert d.fresh.all() and d.means.shape == (10, 3, 2)


def test_model_validation(noninf_prior):
    s = make_sample([0, 0, 0, 1], MEANS, OMEGAS)
    with pytest.raises(ValueError):
        PredictiveModel((), 4, 1.0, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)
    with pytest.raises(ValueError):
        PredictiveModel((s,), 5, 1.0, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)
    with pytest.raises(ValueError):
        PredictiveModel((s,), 4, 1.0, noninf_prior, np.ones(3, bool), ("GENERAL",) * 3)
    with pytest.raises(ValueError):
        PredictiveModel((s,), 4, 0.0, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)


def test_joint_terms_are_sequence_likelihoods(model):
    d = predictive_draws(model, 20, np.random.default_rng(2))
    x = AngleSequence(np.array([[-1.1, 2.2], [np.nan, np.nan]]), [True, False])
    terms = joint_log_terms(x, model, d)
    want = [sequence_log_likelihood(x, mu, om) for mu, om in zip(d.means, d.omegas)]
    np.testing.assert_allclose(terms, want, atol=1e-12)
    assert estimate_joint_logdensity(x, model, draws=d) == pytest.approx(
        special.logsumexp(want) - math.log(20), abs=1e-12)


def test_target_outside_mask_rejected(noninf_prior):
    s = make_sample([0, 0, 0, 1], MEANS, OMEGAS)
    mdl = PredictiveModel((s,), 4, 1.0, noninf_prior, [True, False], ("GENERAL",) * M)
    with pytest.raises(ValueError, match="outside the model mask"):
        estimate_joint_logdensity(AngleSequence.full([[0.0, 0.0], [1.0, 1.0]]), mdl, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        marginal_grid(1, mdl, 5, 30, np.random.default_rng(0))


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=40), st.randoms())
def test_log_mean_exp_order_free(terms, r):
    shuffled = list(terms)
    r.shuffle(shuffled)
    assert log_mean_exp(terms) == log_mean_exp(shuffled)
    assert log_mean_exp(terms) <= max(terms) + 1e-12


def test_conditional_chain_rule(model):
    d = predictive_draws(model, 200, np.random.default_rng(3))
    xs = AngleSequence(np.array([[-1.0, 2.1], [np.nan, np.nan]]), [True, False])
    xq = AngleSequence(np.array([[np.nan, np.nan], [0.4, 0.6]]), [False, True])
    both = AngleSequence(np.array([[-1.0, 2.1], [0.4, 0.6]]), [True, True])
    cond = conditional_logdensity(xs, xq, model, draws=d)
    assert estimate_joint_logdensity(xs, model, draws=d) + cond == pytest.approx(
        estimate_joint_logdensity(both, model, draws=d), abs=1e-10)
    with pytest.raises(ValueError):
        conditional_logdensity(xs, xs, model, draws=d)


def test_monte_carlo_se(model):
    d = predictive_draws(model, 400, np.random.default_rng(4))
    x = AngleSequence.full([[-1.0, 2.0], [0.5, 0.5]])
    est, se = monte_carlo_se(x, model, d)
    assert est == pytest.approx(math.exp(estimate_joint_logdensity(x, model, draws=d)))
    assert 0 < se < est


# ---------------------------------------------------------------- grids

def test_mixture_grid_matches_direct_density():
    params = np.array([[-1.0, 2.0, 8.0, 6.0, -1.0], [0.5, 0.5, 3.0, 3.0, 4.0]])
    g = mixture_log_grid(params, np.log([0.3, 0.7]), 64)
    c = grid_centers(64)
    pts = np.stack(np.meshgrid(c, c, indexing="ij"), -1)
    want = np.logaddexp(math.log(0.3) + sine_log_density(pts, SineModelParams(*params[0])),
                        math.log(0.7) + sine_log_density(pts, SineModelParams(*params[1])))
    np.testing.assert_allclose(g, want, atol=1e-11)


def test_marginal_grid_single_cluster_and_normalization(noninf_prior):
    s = make_sample([0] * 5, MEANS[:1], OMEGAS[:1])
    # n large relative to alpha0 keeps fresh draws negligible; force none via a tiny alpha0
    mdl = PredictiveModel((s,), 5, 1e-12, noninf_prior, np.ones(M, bool), ("GENERAL",) * M)
    grid = marginal_grid(0, mdl, 50, resolution=90, rng=np.random.default_rng(0))
    assert grid.log_density.shape == (90, 90)
    om = OMEGAS[0][0]
    p = SineModelParams(*MEANS[0][0], om[0], om[2], -om[1])
    c = grid_centers(90)
    np.testing.assert_allclose(grid.log_density, sine_log_density(np.stack(np.meshgrid(c, c, indexing="ij"), -1), p),
                               atol=1e-11)
    assert grid.check_normalization() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("resolution", [36, 90, 360])
def test_predictive_grids_integrate_to_one(model, resolution):
    grid = marginal_grid(1, model, 64, resolution, np.random.default_rng(5))
    assert abs(grid.total_mass() - 1) < 0.02
    assert grid.probabilities().sum() == pytest.approx(1.0)


def test_density_grid_checks():
    with pytest.raises(ValueError):
        DensityGrid(0, 4, np.zeros((3, 3)))
    flat = DensityGrid(0, 4, np.full((4, 4), -2 * math.log(2 * math.pi)))
    assert flat.total_mass() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        DensityGrid(0, 4, np.zeros((4, 4))).check_normalization()


# ---------------------------------------------------------------- candidates

def test_candidates_respect_mask(noninf_prior):
    s = make_sample([0, 0, 0, 1], MEANS, OMEGAS)
    mdl = PredictiveModel((s,), 4, 1.0, noninf_prior, [False, True], ("GENERAL",) * M)
    arr = candidate_array(mdl, 25, np.random.default_rng(0))
    assert arr.shape == (25, 2, 2)
    assert np.isnan(arr[:, 0]).all() and np.isfinite(arr[:, 1]).all()
    seqs = sample_candidate_sequences(mdl, 3, np.random.default_rng(0))
    assert [q.present.tolist() for q in seqs] == [[False, True]] * 3
