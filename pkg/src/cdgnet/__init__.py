"""Trainable two-branch deblurring network with a from-scratch autodiff core."""

from .config import Config, load_config, parse_config
from .model import CDGNet, param_count
from .tensor import Tensor, grad_check

__all__ = ["Config", "load_config", "parse_config", "CDGNet", "param_count",
           "Tensor", "grad_check"]

__version__ = "0.1.0"
