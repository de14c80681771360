"""Minimal dense-array numerics: autodiff primitives, attention layers,
Adam optimizer, finite-difference gradient checking, and the checkpoint codec."""

from . import autodiff, gradcheck, layers
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .optimizer import ParamStore

__all__ = [
    "autodiff",
    "gradcheck",
    "layers",
    "Tensor",
    "ParamStore",
    "save_checkpoint",
    "load_checkpoint",
]
