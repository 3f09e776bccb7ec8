"""Keyword-MLP keyword spotting: MFCC frontend, gated-MLP model, training recipe."""

from .audio import AudioClip, MfccConfig, compute_mfcc, load_wav, pad_or_trim
from .config import RunConfig
from .model import ModelConfig, ModelParams, count_macs, count_params, forward, init_params
from .tensor import Tape, Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "MfccConfig", "compute_mfcc", "load_wav", "pad_or_trim", "RunConfig",
    "ModelConfig", "ModelParams", "count_macs", "count_params", "forward", "init_params",
    "Tape", "Tensor", "backward", "grad_check",
]
