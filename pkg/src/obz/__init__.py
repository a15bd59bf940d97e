"""Self-hostable observability backend for computer-vision models."""

from .detectors import (
    GmmModel,
    OutlierVerdict,
    PcaModel,
    calibrate_threshold,
    detect,
    deserialize_model,
    fit_gmm,
    fit_pca,
    gmm_nll,
    pca_loss,
    serialize_model,
)
from .features import (
    CANONICAL_FEATURE_NAMES,
    FeatureVector,
    ImageSample,
    extract_batch,
    extract_first_order,
)
from .obzt import decode_tensor, encode_tensor
from .xai_eval import (
    AttributionMap,
    ModelOracle,
    PerturbationCurve,
    compactness,
    fidelity_score,
    perturbation_curve,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "CANONICAL_FEATURE_NAMES",
    "FeatureVector",
    "GmmModel",
    "ImageSample",
    "ModelOracle",
    "OutlierVerdict",
    "PcaModel",
    "PerturbationCurve",
    "calibrate_threshold",
    "compactness",
    "decode_tensor",
    "detect",
    "deserialize_model",
    "encode_tensor",
    "extract_batch",
    "extract_first_order",
    "fidelity_score",
    "fit_gmm",
    "fit_pca",
    "gmm_nll",
    "pca_loss",
    "perturbation_curve",
    "serialize_model",
]
