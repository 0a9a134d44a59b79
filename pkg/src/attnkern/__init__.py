from ._backend import BACKEND
from .attention import (
    AttentionOutput,
    FeatureMap,
    approx_kernel,
    attention_kernel,
    linear_attention,
    prf_feature,
    prf_features,
    softmax_attention,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AttentionOutput",
    "FeatureMap",
    "approx_kernel",
    "attention_kernel",
    "linear_attention",
    "prf_feature",
    "prf_features",
    "softmax_attention",
]
