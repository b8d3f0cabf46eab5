"""Dense math kernel: tape autodiff, parameters, distributions, RNG streams."""

from .dists import (
    Categorical,
    DistributionSpec,
    Normal,
    Uniform,
    log_prob,
    sample,
    softmax_logits_to_probs,
)
from .lstm import LSTM, Linear, RecurrentState, lstm_step
from .params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from .rng import stream, stream_key
from .tensor import Var, backward, constant, grad

__all__ = [
    "Categorical",
    "DistributionSpec",
    "LSTM",
    "Linear",
    "Normal",
    "ParamStore",
    "RecurrentState",
    "Uniform",
    "Var",
    "adam_step",
    "backward",
    "constant",
    "grad",
    "load_checkpoint",
    "log_prob",
    "lstm_step",
    "sample",
    "save_checkpoint",
    "softmax_logits_to_probs",
    "stream",
    "stream_key",
]
