"""Magnitude-aware linear attention and inception depthwise convolution in a
numpy speech-enhancement U-Net, with hand-written backward passes."""

from .errors import (CheckpointError, ConfigError, EmptySequenceError, GeometryError, ImseError, ShapeError,
                     TrainingDiverged, WavError)
from .idconv import IdConvConfig, idconv_backward, idconv_forward, idconv_param_count
from .mala import attention_gap, mala_backward, mala_context, mala_linear, mala_quadratic, multihead_mala, phi
from .model import (ModelConfig, build_model, count_params, forward_enhance, load_checkpoint, preset,
                    save_checkpoint)
from .spectral import ComplexSpectrogram, StftConfig, istft, stft
from .tensor import deterministic, make_rng

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ComplexSpectrogram", "ConfigError", "EmptySequenceError", "GeometryError",
    "IdConvConfig", "ImseError", "ModelConfig", "ShapeError", "StftConfig", "TrainingDiverged", "WavError",
    "attention_gap", "build_model", "count_params", "deterministic", "forward_enhance", "idconv_backward",
    "idconv_forward", "idconv_param_count", "istft", "load_checkpoint", "make_rng", "mala_backward",
    "mala_context", "mala_linear", "mala_quadratic", "multihead_mala", "phi", "preset", "save_checkpoint",
    "stft",
]
