"""Out-of-distribution detection via projected loss gradients.

In-distribution inputs concentrate their last-layer loss gradient inside
the low-rank span of the training representations; out-of-distribution
inputs leak energy into the orthogonal complement. This package builds
that span with a thin SVD, scores inputs by the norm of the projected
gradient, and ships the synthetic data, metrics, and CLI needed to
reproduce the behaviour end to end.
"""

__version__ = "0.1.0"

from .estimator import GradOrthDetector
from .linalg import NumericError, SvdResult, frobenius_norm, matmul, rank_select, svd_thin
from .metrics import auroc, calibrate_gamma, evaluate_detector, fpr_at_tpr
from .model import (GradientRecord, LayerSpec, Network, all_layer_gradients, conv,
                    conv_layer_gradient, dense, forward, im2col, last_layer_gradient,
                    load_network, loss_value, one_hot, save_network, softmax_probs,
                    train_sgd)
from .rng import SplitMix64
from .scorer import (ScoreConfig, ScoredSample, detect, lp_norm, ood_score, project,
                     score_batch)
from .subspace import (Subspace, build_representation_matrix, compute_subspace,
                       load_subspace, sample_per_class, save_subspace, subspace_for_layer)
from .synth import DatasetSplit, gen_gaussian_blobs, gen_planted_subspace

__all__ = [
    "GradOrthDetector", "NumericError", "SvdResult", "frobenius_norm", "matmul",
    "rank_select", "svd_thin", "auroc", "calibrate_gamma", "evaluate_detector",
    "fpr_at_tpr", "GradientRecord", "LayerSpec", "Network", "all_layer_gradients",
    "conv", "conv_layer_gradient", "dense", "forward", "im2col", "last_layer_gradient",
    "load_network", "loss_value", "one_hot", "save_network", "softmax_probs",
    "train_sgd", "SplitMix64", "ScoreConfig", "ScoredSample", "detect", "lp_norm",
    "ood_score", "project", "score_batch", "Subspace", "build_representation_matrix",
    "compute_subspace", "load_subspace", "sample_per_class", "save_subspace",
    "subspace_for_layer", "DatasetSplit", "gen_gaussian_blobs", "gen_planted_subspace",
]
