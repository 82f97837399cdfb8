"""Hypercomplex prompt-aware multimodal recommendation on numpy/scipy."""
from .cdalgebra import HcVec, cd_add, cd_conjugate, cd_mul, cd_mul_vjp, cd_norm, cd_scale, cd_sub, structure_table
from .model import HyperParams, build_inputs, forward, init_params

__all__ = [
    "HcVec", "cd_add", "cd_conjugate", "cd_mul", "cd_mul_vjp", "cd_norm", "cd_scale", "cd_sub",
    "structure_table", "HyperParams", "build_inputs", "forward", "init_params",
]
__version__ = "0.1.0"
