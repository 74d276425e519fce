"""
ScoreDVI Variational Parameters

Theta and its link functions, the direct and convolutional backends that
produce it, the Adam optimizer and weight checkpoints.
"""

from .adam import Adam, AdamState
from .backends import ConvBackend, DirectBackend, ParamBackend, create_backend
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .theta import THETA_FIELDS, Theta, ThetaGrad, heads_to_theta, theta_to_head_grads

__all__ = [
    "Adam",
    "AdamState",
    "ParamBackend",
    "DirectBackend",
    "ConvBackend",
    "create_backend",
    "save_checkpoint",
    "read_checkpoint",
    "load_checkpoint",
    "THETA_FIELDS",
    "Theta",
    "ThetaGrad",
    "heads_to_theta",
    "theta_to_head_grads",
]
