"""Shrink-and-match covariance sensing of asynchronous MIMO-OFDM signals."""
from .dictionary import (JointDictionary, SparseCoefficients, SpatialDictionary, TemporalDictionary,
                         ground_truth_sigma, ground_truth_spatial, ground_truth_temporal, make_dictionary,
                         model_covariance)
from .metrics import aggregate_metrics, aoa_rmse, music_aoa, normalized_mse, sample_covariance
from .sensing import SensingParams, SensingReport, detect_aoas, shrink_and_match, ssm, ssm_scenario
from .shrinkage import ShrinkageParams, shrinkage_estimate
from .signal_model import Scenario, ScenarioSpec, SystemDims, draw_scenario, synthesize_rx
from .sparse_match import NnOmpParams, match_covariance, nn_omp, nnls

__version__ = "0.1.0"

__all__ = [
    "JointDictionary", "NnOmpParams", "Scenario", "ScenarioSpec", "SensingParams", "SensingReport",
    "ShrinkageParams", "SparseCoefficients", "SpatialDictionary", "SystemDims", "TemporalDictionary",
    "aggregate_metrics", "aoa_rmse", "detect_aoas", "draw_scenario", "ground_truth_sigma",
    "ground_truth_spatial", "ground_truth_temporal", "make_dictionary", "match_covariance",
    "model_covariance", "music_aoa", "nn_omp", "nnls", "normalized_mse", "sample_covariance",
    "shrink_and_match", "shrinkage_estimate", "ssm", "ssm_scenario", "synthesize_rx",
]
