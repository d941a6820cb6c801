"""Theory-side predictions: rate laws, the spectral limit of T and the single-index potential."""

from .free_entropy import (FreeEntropyProblem, FreeEntropyResult, f_rs, free_entropy_threshold,
                           it_transition, lower_constant, upper_constant)
from .rates import (MseDecomposition, RatePrediction, bayes_thresholds, predict_mse_decomposition,
                    predict_rates)
from .report import prediction_record, write_predictions
from .rmt import (LabelMeasure, OutOfSupportWarning, RmtPrediction, SpikePrediction, build_label_measure,
                  bulk_edge, conditional_moment_G, solve_spikes)

__all__ = [
    "FreeEntropyProblem", "FreeEntropyResult", "LabelMeasure", "MseDecomposition", "OutOfSupportWarning",
    "RatePrediction", "RmtPrediction", "SpikePrediction", "bayes_thresholds", "build_label_measure",
    "bulk_edge", "conditional_moment_G", "f_rs", "free_entropy_threshold", "it_transition",
    "lower_constant", "prediction_record", "predict_mse_decomposition", "predict_rates", "solve_spikes",
    "upper_constant", "write_predictions",
]
