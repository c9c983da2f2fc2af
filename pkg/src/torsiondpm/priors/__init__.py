"""Centering distributions, the Wishart prior and the conjugate mean updates."""

from .centering import HMMPrior, NoninformativePrior, default_noninformative
from .conjugate import (EightParamPosterior, ProposalMixture, eight_param_posterior,
                        mean_target_logdensity, mixture_full_conditional,
                        run_independence_chain, sample_mean_full_conditional,
                        sine_approx_lambda)
from .hmm import (RESIDUE_CLASSES, STATES, ResiduePriorSet, SecondaryStructureHMM,
                  estimate_transition_matrix, fb_sample_states, hmm_log_prior,
                  stationary_distribution)
from .mixture import SineMixture
from .wishart import WishartPrior, wishart_logdensity, wishart_sample

__all__ = [
    "EightParamPosterior", "HMMPrior", "NoninformativePrior", "ProposalMixture",
    "RESIDUE_CLASSES", "ResiduePriorSet", "STATES", "SecondaryStructureHMM", "SineMixture",
    "WishartPrior", "default_noninformative", "eight_param_posterior",
    "estimate_transition_matrix", "fb_sample_states", "hmm_log_prior",
    "mean_target_logdensity", "mixture_full_conditional", "run_independence_chain",
    "sample_mean_full_conditional", "sine_approx_lambda", "stationary_distribution",
    "wishart_logdensity", "wishart_sample",
]
