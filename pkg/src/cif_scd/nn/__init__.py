from . import tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    FFN,
    CausalSelfAttention,
    Conv1d,
    LayerNorm,
    Linear,
    Module,
    TransformerLayer,
    causal_mask,
)
from .losses import AmsConfig, ams_posteriors, amsoftmax_loss, bce_loss
from .optim import Adam, Sgd, WarmupHold
from .tensor import Tensor

__all__ = [
    "Adam",
    "AmsConfig",
    "CausalSelfAttention",
    "Conv1d",
    "FFN",
    "LayerNorm",
    "Linear",
    "Module",
    "Sgd",
    "Tensor",
    "TransformerLayer",
    "WarmupHold",
    "ams_posteriors",
    "amsoftmax_loss",
    "bce_loss",
    "causal_mask",
    "load_checkpoint",
    "save_checkpoint",
    "tensor",
]
