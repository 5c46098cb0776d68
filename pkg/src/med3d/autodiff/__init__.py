"""Minimal reverse-mode autodiff engine for 3D feature maps."""

from . import functional
from .optim import SGD, Adam
from .tensor import Tensor, backward

__all__ = ["Tensor", "backward", "functional", "SGD", "Adam"]
