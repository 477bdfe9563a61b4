"""Inception depthwise convolution.

Input channels are split into four contiguous groups:

    identity | k×k square | 1×K time band | K×1 frequency band

Each non-identity group is filtered with a depthwise kernel under "same"
zero padding and the groups are concatenated back in order. Axis convention
for C×H×W inputs: H indexes frequency bins, W indexes time frames, so the
1×K kernel runs along time and the K×1 kernel along frequency.

Branch kernels carry no bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, dwconv2d, dwconv2d_backward

BRANCH_WEIGHTS = ("w_square", "w_time", "w_freq")


@dataclass(frozen=True)
class IdConvConfig:
    channels: int
    split: tuple[int, int, int, int]
    square_kernel: int = 3
    band_kernel: int = 11

    def __post_init__(self):
        if len(self.split) != 4 or any(g < 0 for g in self.split):
            raise ConfigError(f"split must be four non-negative group sizes, got {self.split}")
        if sum(self.split) != self.channels:
            raise ConfigError(f"split {self.split} does not sum to {self.channels} channels")
        if self.square_kernel % 2 == 0 or self.band_kernel % 2 == 0:
            raise ConfigError("kernel sizes must be odd")

    @classmethod
    def equal(cls, channels: int, **kw) -> "IdConvConfig":
        """C//4 channels per convolution branch, remainder on the identity branch."""
        g = channels // 4
        return cls(channels, (channels - 3 * g, g, g, g), **kw)

    @classmethod
    def with_ratio(cls, channels: int, ratio: float, **kw) -> "IdConvConfig":
        """``round(ratio*C)`` channels per convolution branch (InceptionNeXt uses 1/8)."""
        g = int(round(channels * ratio))
        if 3 * g > channels:
            raise ConfigError(f"branch ratio {ratio} leaves no room in {channels} channels")
        return cls(channels, (channels - 3 * g, g, g, g), **kw)

    def kernel_shapes(self) -> dict[str, tuple[int, int, int]]:
        _, g2, g3, g4 = self.split
        k, b = self.square_kernel, self.band_kernel
        return {"w_square": (g2, k, k), "w_time": (g3, 1, b), "w_freq": (g4, b, 1)}


def split_channels(x: Tensor, cfg: IdConvConfig) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    if x.ndim != 3 or x.shape[0] != cfg.channels:
        raise ConfigError(f"input with shape {x.shape} does not have {cfg.channels} channels")
    edges = np.cumsum((0,) + cfg.split)
    return tuple(x[edges[i]:edges[i + 1]] for i in range(4))


def concat_channels(parts) -> Tensor:
    return np.concatenate(parts, axis=0)


def init_idconv_weights(cfg: IdConvConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    out = {}
    for name, shape in cfg.kernel_shapes().items():
        fan_in = shape[1] * shape[2]
        out[name] = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)
    return out


def _check_weights(weights: dict[str, Tensor], cfg: IdConvConfig) -> None:
    for name, shape in cfg.kernel_shapes().items():
        if weights[name].shape != shape:
            raise ShapeError(f"{name} has shape {weights[name].shape}, expected {shape}")


def idconv_forward(x: Tensor, weights: dict[str, Tensor], cfg: IdConvConfig) -> Tensor:
    _check_weights(weights, cfg)
    x1, x2, x3, x4 = split_channels(x, cfg)
    return concat_channels([
        x1,
        dwconv2d(x2, weights["w_square"]),
        dwconv2d(x3, weights["w_time"]),
        dwconv2d(x4, weights["w_freq"]),
    ])


def idconv_backward(x: Tensor, weights: dict[str, Tensor], cfg: IdConvConfig,
                    dy: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    _check_weights(weights, cfg)
    if dy.shape != x.shape:
        raise ShapeError(f"upstream gradient {dy.shape} does not match output {x.shape}")
    xs = split_channels(x, cfg)
    dys = split_channels(dy, cfg)
    dx_parts = [dys[0].copy()]
    grads = {}
    for xi, dyi, name in zip(xs[1:], dys[1:], BRANCH_WEIGHTS):
        dxi, grads[name] = dwconv2d_backward(xi, weights[name], dyi)
        dx_parts.append(dxi)
    return concat_channels(dx_parts), grads


def idconv_param_count(cfg: IdConvConfig) -> int:
    """Branch kernel weights only; the pointwise mix that follows is counted by its owner."""
    return sum(int(np.prod(s)) for s in cfg.kernel_shapes().values())
