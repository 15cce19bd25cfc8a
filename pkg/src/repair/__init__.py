"""Post-hoc reranking of top-k shortlists for long-tailed classification.

A frozen base model's scores are reduced to deterministic top-k shortlists.
The reranker adds learned classwise offsets and a rival-averaged linear
pairwise correction, fitted by penalised conditional likelihood on covered
calibration examples and stabilised by empirical-Bayes shrinkage.
"""

from . import errors
from .baselines import (LogitAdjScorer, TauNormScorer, ablation_fit, base_scorer, logit_adjust,
                        tau_norm, tune_tau)
from .diagnostics import (class_dispersions, contradictory_pair_witness, dispersion,
                          fit_offsets_from_gaps, offset_scan, oracle_residual, quintile_gains,
                          scan_witnesses, threshold)
from .features import FeatureConfig, feature_vector, log_freq_ratio, log_prob_ratio, rank_gap, \
    score_gap
from .formats import read_model, read_scores, write_model, write_report, write_scores
from .metrics import evaluate, hfr, rank_of_truth, rho_k, unconditional
from .model import (ModelScorer, OptimizerConfig, PreparedBatch, PreparedExample, fit, objective,
                    pairwise_correction, prepare, rerank_scores, shortlist_softmax)
from .shortlist import build_shortlist, build_shortlists, coverage, covered_subset
from .shrinkage import ShrinkageGroups, estimate_variances, shrink, shrink_params
from .synth import SyntheticDataset, SyntheticSpec, generate, true_posterior
from .types import (ClassStats, Dataset, EvalReport, FeatureVector, ModelParams, ScoreRecord,
                    ShortlistBatch, ShortlistContext, Similarity, validate_dataset)

__version__ = "0.1.0"
