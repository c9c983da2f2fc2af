"""Dirichlet-process mixtures of bivariate von Mises sine models for aligned torsion angles."""

from .dataset import AlignmentDataset, AngleSequence
from .priors import (HMMPrior, NoninformativePrior, ResiduePriorSet, SecondaryStructureHMM,
                     SineMixture, WishartPrior)
from .sampler import ClusterState, McmcConfig, PosteriorSample, run_chain
from .torus import AnglePair, PrecisionMatrix, SineModelParams

__version__ = "0.1.0"

__all__ = [
    "AlignmentDataset", "AnglePair", "AngleSequence", "ClusterState", "HMMPrior", "McmcConfig",
    "NoninformativePrior", "PosteriorSample", "PrecisionMatrix", "ResiduePriorSet",
    "SecondaryStructureHMM", "SineMixture", "SineModelParams", "WishartPrior", "run_chain",
]
