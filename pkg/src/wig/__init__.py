"""Fitness-weighted integrated gradients on small numpy models.

Attribution maps from several baselines are combined with weights inversely
proportional to how many top-ranked pixels must be masked to halve the model
score. Deletion and overlap metrics, a paired t-test, Monte Carlo checks of
the relevance guarantees and a CLI are included.
"""

__version__ = "0.1.0"

from .attribution import (AttributionMap, BaselineSet, PathQuadrature, completeness_gap,
                          expected_gradients, generalized_completeness_gap, integrated_gradients,
                          load_attribution, normalized_positive_profile, save_attribution,
                          weighted_integrated_gradients)
from .errors import (ConfigError, DegenerateError, FormatError, NonFiniteError, ShapeError,
                     TrainingDivergedError, WigError)
from .evaluation import deletion_auc, deletion_curve, overlap_auc, overlap_curve, paired_t_test
from .fitness import (FitnessConfig, FitnessResult, compute_d_alpha, compute_d_alpha_oracle,
                      filter_baselines, fitness_weights, weighted_attribution)
from .model import Model, build_architecture, forward, gradient, load_model, save_model, train_model
from .tensor import read_ntf, write_ntf

__all__ = [
    "AttributionMap", "BaselineSet", "PathQuadrature", "completeness_gap", "expected_gradients",
    "generalized_completeness_gap", "integrated_gradients", "load_attribution",
    "normalized_positive_profile", "save_attribution", "weighted_integrated_gradients",
    "ConfigError", "DegenerateError", "FormatError", "NonFiniteError", "ShapeError",
    "TrainingDivergedError", "WigError", "deletion_auc", "deletion_curve", "overlap_auc",
    "overlap_curve", "paired_t_test", "FitnessConfig", "FitnessResult", "compute_d_alpha",
    "compute_d_alpha_oracle", "filter_baselines", "fitness_weights", "weighted_attribution",
    "Model", "build_architecture", "forward", "gradient", "load_model", "save_model",
    "train_model", "read_ntf", "write_ntf", "__version__",
]
