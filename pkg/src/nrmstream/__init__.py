"""Streaming variational inference for normalized random measure mixtures.

Single-pass streaming fits, multi-pass batch refinement, and a collapsed
Gibbs baseline for generalized-gamma-process mixture models of count
vectors under a multinomial-Dirichlet observation model.
"""

from .ggp import (
    AuxiliaryMode,
    NggpParams,
    aux_mode,
    expected_clusters_update,
    laplace_exponent,
    log_aux_density,
    log_tilted_moment,
    predictive_weights,
)
from .observation import DirichletPosterior, SparseDoc, log_prior_predictive
from .corpus import Corpus, gen_bars, gen_pitman_yor_mixture, parse_uci_bow, split
from .adf import ClusterState, ModelState, adf_step, merge_clusters, run_stream

__all__ = [
    "AuxiliaryMode",
    "NggpParams",
    "aux_mode",
    "expected_clusters_update",
    "laplace_exponent",
    "log_aux_density",
    "log_tilted_moment",
    "predictive_weights",
    "DirichletPosterior",
    "SparseDoc",
    "log_prior_predictive",
    "Corpus",
    "gen_bars",
    "gen_pitman_yor_mixture",
    "parse_uci_bow",
    "split",
    "ClusterState",
    "ModelState",
    "adf_step",
    "merge_clusters",
    "run_stream",
]
