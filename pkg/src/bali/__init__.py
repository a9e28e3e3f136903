"""Layerwise Bayesian inference for neural networks with conjugate
matrix-normal inverse-Wishart layer posteriors."""

from .conjugate import MatrixNormal, MniwParams, mniw_posterior, mvblr_posterior
from .inference import BaliConfig, BaliModel, init_model, predict, train_step
from .network import LayerSpec, mlp

__all__ = [
    "BaliConfig",
    "BaliModel",
    "LayerSpec",
    "MatrixNormal",
    "MniwParams",
    "init_model",
    "mlp",
    "mniw_posterior",
    "mvblr_posterior",
    "predict",
    "train_step",
]
