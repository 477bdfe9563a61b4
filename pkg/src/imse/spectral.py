"""Short-time Fourier analysis and synthesis.

Defaults follow the model's front end: 510-sample frames, 256-sample hop,
16 kHz, periodic Hann window. 510 is not a power of two, so the default
transform is a direct DFT written as a product with a precomputed
``frame_len × F`` cosine/sine basis (``F = frame_len // 2 + 1``), applied to
all frames at once. ``method="fft"`` switches to ``numpy.fft`` and is meant
for power-of-two frames such as 512.

Synthesis is weighted overlap-add with the same window followed by division
by the summed squared window, floor-clamped at 1e-8. Since 510/256 does not
satisfy constant overlap-add, this normalisation is what makes the round
trip exact. No padding is added at the signal edges: frame ``t`` covers
samples ``[t*hop, t*hop + frame_len)`` and samples past the last full frame
are not represented.

``istft_adjoint`` is the transpose of ``istft`` (it is linear in the
spectrogram) and is used to back-propagate waveform losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

ENVELOPE_FLOOR = 1e-8


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 510
    hop: int = 256
    sample_rate: int = 16000
    window: str = "hann"
    method: str = "direct"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ConfigError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window not in ("hann", "rect"):
            raise ConfigError(f"unknown window {self.window!r}")
        if self.method not in ("direct", "fft"):
            raise ConfigError(f"unknown transform method {self.method!r}")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.frame_len) // self.hop

    def covered_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_len


@dataclass
class ComplexSpectrogram:
    """One-sided spectrogram, bins × frames."""

    real: Tensor
    imag: Tensor
    cfg: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ShapeError(f"real/imag must be matching F×T arrays, got {self.real.shape} and {self.imag.shape}")
        if self.real.shape[0] != self.cfg.n_bins:
            raise ShapeError(f"{self.real.shape[0]} bins but frame_len {self.cfg.frame_len} implies {self.cfg.n_bins}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    @property
    def n_frames(self) -> int:
        return self.real.shape[1]

    def magnitude(self) -> Tensor:
        return np.hypot(self.real, self.imag)

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def window(cfg: StftConfig) -> Tensor:
    n = cfg.frame_len
    if cfg.window == "rect":
        return np.ones(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@lru_cache(maxsize=8)
def _basis(n: int) -> tuple[Tensor, Tensor]:
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    # reduce the phase index mod n before scaling to keep the angles small and exact
    ang = 2.0 * np.pi * ((np.outer(t, k) % n) / n)
    cos, sin = np.cos(ang), -np.sin(ang)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


def _bin_weights(n: int) -> Tensor:
    """Multiplicity of each one-sided bin in the full spectrum."""
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def dft_real(frames: Tensor, cfg: StftConfig | None = None) -> tuple[Tensor, Tensor]:
    """One-sided DFT of the last axis; returns ``(real, imag)``."""
    n = frames.shape[-1]
    if cfg is not None and n != cfg.frame_len:
        raise ShapeError(f"frame length {n} does not match configured {cfg.frame_len}")
    if cfg is not None and cfg.method == "fft":
        spec = np.fft.rfft(frames, axis=-1)
        return spec.real, spec.imag
    cos, sin = _basis(n)
    return frames @ cos, frames @ sin


def idft_real(real: Tensor, imag: Tensor, n: int, method: str = "direct") -> Tensor:
    """Inverse of ``dft_real`` along the last axis (imaginary parts of DC/Nyquist are ignored)."""
    if method == "fft":
        return np.fft.irfft(real + 1j * imag, n=n, axis=-1)
    cos, sin = _basis(n)
    c = _bin_weights(n) / n
    return (real * c) @ cos.T + (imag * c) @ sin.T


def _idft_adjoint(g: Tensor, n: int) -> tuple[Tensor, Tensor]:
    cos, sin = _basis(n)
    c = _bin_weights(n) / n
    return (g @ cos) * c, (g @ sin) * c


def frame_signal(signal: Tensor, cfg: StftConfig) -> Tensor:
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"expected a mono 1-D signal, got shape {x.shape}")
    if len(x) < cfg.frame_len:
        raise ShapeError(f"signal of {len(x)} samples is shorter than one {cfg.frame_len}-sample frame")
    t = cfg.n_frames(len(x))
    return np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[::cfg.hop][:t]


def stft(signal: Tensor, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    frames = frame_signal(signal, cfg) * window(cfg)
    re, im = dft_real(frames, cfg)
    return ComplexSpectrogram(np.ascontiguousarray(re.T), np.ascontiguousarray(im.T), cfg)


def ola_envelope(cfg: StftConfig, n_frames: int) -> Tensor:
    w2 = window(cfg) ** 2
    env = np.zeros(cfg.covered_length(n_frames))
    for t in range(n_frames):
        env[t * cfg.hop:t * cfg.hop + cfg.frame_len] += w2
    return np.maximum(env, ENVELOPE_FLOOR)


def _overlap_add(frames: Tensor, cfg: StftConfig) -> Tensor:
    n_frames = frames.shape[0]
    out = np.zeros(cfg.covered_length(n_frames))
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.frame_len] += frames[t]
    return out


def istft(spec: ComplexSpectrogram) -> Tensor:
    """Signal of length ``(T-1)*hop + frame_len``."""
    cfg = spec.cfg
    frames = idft_real(spec.real.T, spec.imag.T, cfg.frame_len, cfg.method) * window(cfg)
    return _overlap_add(frames, cfg) / ola_envelope(cfg, spec.n_frames)


def istft_adjoint(grad: Tensor, cfg: StftConfig, n_frames: int) -> tuple[Tensor, Tensor]:
    """Pull a waveform gradient back to ``(d_real, d_imag)`` of shape F×T."""
    if grad.shape != (cfg.covered_length(n_frames),):
        raise ShapeError(f"gradient of length {grad.shape} does not match {n_frames} frames")
    g = grad / ola_envelope(cfg, n_frames)
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.frame_len)
    gf = g[idx] * window(cfg)
    d_re, d_im = _idft_adjoint(gf, cfg.frame_len)
    return np.ascontiguousarray(d_re.T), np.ascontiguousarray(d_im.T)


def interior(cfg: StftConfig, n_frames: int) -> slice:
    """Samples covered by at least two frames (the middle half of a lone frame)."""
    if n_frames < 2:
        return slice(cfg.frame_len // 4, cfg.frame_len - cfg.frame_len // 4)
    return slice(cfg.hop, cfg.covered_length(n_frames) - cfg.hop)
