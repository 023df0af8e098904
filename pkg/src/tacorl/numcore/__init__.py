"""Minimal float64 autodiff, layers, Adam and the distributions used by the policies."""
from . import tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .distributions import (
    BinSpec,
    GaussianParams,
    LogisticMixtureParams,
    gaussian_kl,
    gaussian_sample_tanh,
    kl_balanced,
    logistic_mixture_logprob,
)
from .nn import LSTM, MLP, LayerNorm, Linear, Module, TransformerBlock
from .optim import Adam, AdamState, NonFiniteGradient
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BinSpec",
    "CheckpointError",
    "GaussianParams",
    "LSTM",
    "LayerNorm",
    "Linear",
    "LogisticMixtureParams",
    "MLP",
    "Module",
    "NonFiniteGradient",
    "ShapeError",
    "Tensor",
    "TransformerBlock",
    "gaussian_kl",
    "gaussian_sample_tanh",
    "kl_balanced",
    "load_checkpoint",
    "logistic_mixture_logprob",
    "no_grad",
    "save_checkpoint",
    "tensor",
]
