"""Normalization layers, recurrent cells and GLM Fisher geometry on a small numpy autodiff engine."""

from . import autodiff, cells, geometry, invariance, normalizers
from .autodiff import Adam, Parameter, Tensor, backward, finite_diff_check
from .normalizers import BatchNorm, LayerNorm, batch_norm_apply, layer_norm_apply, weight_norm_apply

__version__ = "0.1.0"
