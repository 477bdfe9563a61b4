"""16-bit PCM WAV reading and writing.

Samples are normalised as ``int16 / 32768`` on read and written back as
``round(x * 32768)`` clipped to the int16 range, so a read/write cycle
reproduces the payload exactly.
"""

from __future__ import annotations

import math
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import WavError

SCALE = 32768.0


@dataclass
class WavFile:
    sample_rate: int
    samples: np.ndarray  # (n,) for mono, (n, channels) otherwise

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def wav_read(path: str | Path, downmix: bool = True) -> WavFile:
    """Read a RIFF/WAVE PCM16 file; stereo is averaged to mono (with a warning) unless ``downmix=False``."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except wave.Error as exc:
        raise WavError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    except EOFError as exc:
        raise WavError(f"{path}: truncated WAV header") from exc
    if width != 2:
        raise WavError(f"{path}: only 16-bit PCM is supported, file has {8 * width}-bit samples")
    if channels not in (1, 2):
        raise WavError(f"{path}: {channels} channels; only mono and stereo are supported")
    if len(raw) != n * channels * width:
        raise WavError(f"{path}: truncated data chunk ({len(raw)} of {n * channels * width} bytes)")
    data = np.frombuffer(raw, dtype="<i2").astype(float) / SCALE
    if channels == 1:
        return WavFile(rate, data)
    data = data.reshape(-1, channels)
    if not downmix:
        return WavFile(rate, data)
    warnings.warn(f"{path}: stereo input downmixed to mono", stacklevel=2)
    return WavFile(rate, data.mean(axis=1))


def wav_write(path: str | Path, wav: WavFile) -> None:
    pcm = np.clip(np.round(np.asarray(wav.samples) * SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(wav.channels)
        fh.setsampwidth(2)
        fh.setframerate(int(wav.sample_rate))
        fh.writeframes(pcm.tobytes())


def resample(samples: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Polyphase resampling between integer rates."""
    from scipy.signal import resample_poly

    if rate_in == rate_out:
        return samples
    g = math.gcd(rate_in, rate_out)
    return resample_poly(samples, rate_out // g, rate_in // g)
