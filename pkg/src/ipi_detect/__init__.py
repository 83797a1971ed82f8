"""Detection of intimate partner infiltration from smartphone usage traces.

Identity branch (multi-head LSTM autoencoder + SVM head), intent branch
(LSTM-CNN), temporal smoothing, context-aware fusion and a synthetic trace
generator for desk-scale evaluation.
"""

from .adaptation import AdaptationConfig, adapt, select_calibration_windows
from .fusion import FusionParams, TcmParams, calibrate_threshold, decide, fusion_score, tcm_identity, tcm_intent
from .identity import IdentityHead, MultiHeadLSTMAutoencoder, difference_vector, fit_identity_head, predict_identity
from .intent import IntentClassifier, IntentDistribution, topk
from .preprocessing import MinMaxNormalizer, NormalizationParams, apply_normalizer, fit_normalizer
from .taxonomy import TaxonomyLabel, taxonomy_lookup
from .traces import MultimodalSample, Trace, encode_sample, make_windows, read_trace, resample, write_trace

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig",
    "adapt",
    "select_calibration_windows",
    "FusionParams",
    "TcmParams",
    "calibrate_threshold",
    "decide",
    "fusion_score",
    "tcm_identity",
    "tcm_intent",
    "IdentityHead",
    "MultiHeadLSTMAutoencoder",
    "difference_vector",
    "fit_identity_head",
    "predict_identity",
    "IntentClassifier",
    "IntentDistribution",
    "topk",
    "MinMaxNormalizer",
    "NormalizationParams",
    "apply_normalizer",
    "fit_normalizer",
    "TaxonomyLabel",
    "taxonomy_lookup",
    "MultimodalSample",
    "Trace",
    "encode_sample",
    "make_windows",
    "read_trace",
    "resample",
    "write_trace",
]
