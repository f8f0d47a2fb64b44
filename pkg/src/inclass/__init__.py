"""Mixture model estimation with independent classifier networks.

Each variate of a datapoint is fed to its own softmax classifier; training
the classifiers jointly, without labels, makes their outputs identify the
components of a conditional independence mixture. From the trained
classifiers the package extracts mixture weights, per-variate component
densities and an aggregate classifier.
"""

from .costs import COSTS, RegularizerConfig, neg_cmi_cost, neg_ctc_cost
from .diagnostics import (DiagnosticsReport, check_necessary, check_sufficient,
                          confusion_matrix, match_components, total_correlation_classifier,
                          total_correlation_direct)
from .estimator import InClassMixture
from .extraction import ExtractedModel, PseudoWeights, extract_model, fit_marginal
from .synthetic import MixtureSpec, sample_checkerboard, sample_mixture
from .trainer import (Dataset, InClassNet, TrainConfig, build_inclass_net, pretrain_supervised,
                      scan_components, train)

__version__ = "0.1.0"

__all__ = [
    "COSTS", "RegularizerConfig", "neg_cmi_cost", "neg_ctc_cost", "DiagnosticsReport",
    "check_necessary", "check_sufficient", "confusion_matrix", "match_components",
    "total_correlation_classifier", "total_correlation_direct", "InClassMixture",
    "ExtractedModel", "PseudoWeights", "extract_model", "fit_marginal", "MixtureSpec",
    "sample_checkerboard", "sample_mixture", "Dataset", "InClassNet", "TrainConfig",
    "build_inclass_net", "pretrain_supervised", "scan_components", "train",
]
