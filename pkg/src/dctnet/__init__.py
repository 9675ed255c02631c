"""Spectral residual networks: cosine-transform perceptron layers, models
built from them, cost analysis, and a desk-scale training loop.
"""

from .analysis import CostReport, cost_report, count_macs, count_model_params, count_params
from .dct import dct1d, dct2d, idct1d, idct2d, make_plan
from .filtering import dct_downsample, dct_filter_2d, kernel_to_multipliers, sym_conv_spatial
from .models import ModelSpec, build_model, canonical_names, canonical_spec, insert_extra_dctp, load_spec
from .perceptron import DctPerceptronConfig, soft_threshold
from .tensor import Parameter, Tensor, backward, no_grad
from .train import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "cost_report",
    "count_macs",
    "count_model_params",
    "count_params",
    "dct1d",
    "dct2d",
    "idct1d",
    "idct2d",
    "make_plan",
    "dct_downsample",
    "dct_filter_2d",
    "kernel_to_multipliers",
    "sym_conv_spatial",
    "ModelSpec",
    "build_model",
    "canonical_names",
    "canonical_spec",
    "insert_extra_dctp",
    "load_spec",
    "DctPerceptronConfig",
    "soft_threshold",
    "Parameter",
    "Tensor",
    "backward",
    "no_grad",
    "TrainConfig",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "__version__",
]
