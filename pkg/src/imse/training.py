"""Toy-scale training: synthetic pairs, loss, AdamW, gradient checking, training loop.

Clean signals are sums of a few random sinusoids (optionally plus a linear
chirp) and are mixed with seeded white or band-limited noise at an exact
SNR. The loss is the mean absolute magnitude error over all T-F bins plus
the negative scale-invariant SNR (dB) of the resynthesised waveform, with
equal weights.

Waveform terms (loss and reported SI-SNR) are evaluated on the interior
samples covered by two frames. At the outer edges a lone window is close
to zero, so a masked (inconsistent) spectrogram is amplified there by the
overlap-add normalisation and the edge samples carry no usable signal.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, TrainingDiverged
from .layers import Module
from .model import EnhancerModel, save_checkpoint
from .spectral import ComplexSpectrogram, interior, istft, istft_adjoint, stft
from .tensor import make_rng

DB = 10.0 / math.log(10.0)
SISNR_EPS = 1e-8
MAG_EPS = 1e-12


# -- synthetic data ---------------------------------------------------------------

@dataclass(frozen=True)
class ToyDatasetConfig:
    n_items: int = 200
    n_val: int = 40
    duration: float = 0.2
    sample_rate: int = 16000
    min_tones: int = 2
    max_tones: int = 4
    chirp_prob: float = 0.5
    f_min: float = 150.0
    f_max: float = 4000.0
    noise: str = "white"  # or "band"
    snr_db: float = 0.0


@dataclass
class ToyDataset:
    train: list[tuple[np.ndarray, np.ndarray]]
    val: list[tuple[np.ndarray, np.ndarray]]
    cfg: ToyDatasetConfig


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return DB * math.log(float(clean @ clean) / float(noise @ noise))


def _noise(cfg: ToyDatasetConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    if cfg.noise == "white":
        return white
    if cfg.noise != "band":
        raise ValueError(f"unknown noise kind {cfg.noise!r}")
    lo = rng.uniform(0.0, 0.5) * cfg.sample_rate / 2
    hi = lo + rng.uniform(0.2, 0.5) * cfg.sample_rate / 2
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n)


def synth_pair(cfg: ToyDatasetConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``(clean, noisy)`` with ``noisy = clean + noise`` at exactly ``cfg.snr_db``."""
    n = int(round(cfg.duration * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    clean = np.zeros(n)
    for _ in range(rng.integers(cfg.min_tones, cfg.max_tones + 1)):
        f = rng.uniform(cfg.f_min, cfg.f_max)
        clean += rng.uniform(0.1, 0.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    if rng.random() < cfg.chirp_prob:
        f0, f1 = rng.uniform(cfg.f_min, cfg.f_max, size=2)
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / cfg.duration * t * t)
        clean += rng.uniform(0.1, 0.3) * np.sin(phase)
    noise = _noise(cfg, n, rng)
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        return clean, clean.copy()
    gain = math.sqrt(float(clean @ clean) / (float(noise @ noise) * 10 ** (cfg.snr_db / 10)))
    return clean, clean + gain * noise


def make_toy_dataset(cfg: ToyDatasetConfig, seed: int) -> ToyDataset:
    rng = make_rng(seed)
    train = [synth_pair(cfg, rng) for _ in range(cfg.n_items)]
    val = [synth_pair(cfg, rng) for _ in range(cfg.n_val)]
    return ToyDataset(train, val, cfg)


# -- loss ----------------------------------------------------------------------------

def si_snr(est: np.ndarray, ref: np.ndarray) -> float:
    return si_snr_and_grad(est, ref)[0]


def si_snr_and_grad(est: np.ndarray, ref: np.ndarray) -> tuple[float, np.ndarray]:
    """Scale-invariant SNR in dB (zero-mean signals) and its gradient w.r.t. ``est``."""
    if est.shape != ref.shape:
        raise ShapeError(f"signal shapes differ: {est.shape} vs {ref.shape}")
    e = est - est.mean()
    t = ref - ref.mean()
    tt = t @ t + SISNR_EPS
    alpha = (e @ t) / tt
    noise = e - alpha * t
    num = alpha * alpha * (t @ t) + SISNR_EPS
    den = noise @ noise + SISNR_EPS
    value = DB * (math.log(num) - math.log(den))
    g_num = 2 * alpha * (t @ t) / tt * t
    g_den = 2 * (noise - t * (t @ noise) / tt)
    g = DB * (g_num / num - g_den / den)
    return value, g - g.mean()


@dataclass(frozen=True)
class LossTerms:
    magnitude: float
    si_snr: float

    @property
    def total(self) -> float:
        return self.magnitude - self.si_snr


def _check_pair(enh: ComplexSpectrogram, clean: ComplexSpectrogram, ew, cw):
    if enh.shape != clean.shape or ew.shape != cw.shape:
        raise ShapeError(f"loss inputs differ in shape: {enh.shape}/{clean.shape}, {ew.shape}/{cw.shape}")


def loss_terms(enhanced_spec, clean_spec, enhanced_wav, clean_wav) -> LossTerms:
    _check_pair(enhanced_spec, clean_spec, enhanced_wav, clean_wav)
    mag_e = np.sqrt(enhanced_spec.real**2 + enhanced_spec.imag**2 + MAG_EPS)
    mag_c = np.sqrt(clean_spec.real**2 + clean_spec.imag**2 + MAG_EPS)
    return LossTerms(float(np.abs(mag_e - mag_c).mean()), si_snr(enhanced_wav, clean_wav))


def loss(enhanced_spec, clean_spec, enhanced_wav, clean_wav) -> float:
    return loss_terms(enhanced_spec, clean_spec, enhanced_wav, clean_wav).total


def loss_and_grad(enhanced_spec, clean_spec, enhanced_wav, clean_wav):
    """Loss value with gradients w.r.t. enhanced real part, imaginary part and waveform."""
    _check_pair(enhanced_spec, clean_spec, enhanced_wav, clean_wav)
    yr, yi = enhanced_spec.real, enhanced_spec.imag
    mag_e = np.sqrt(yr**2 + yi**2 + MAG_EPS)
    mag_c = np.sqrt(clean_spec.real**2 + clean_spec.imag**2 + MAG_EPS)
    diff = mag_e - mag_c
    coef = np.sign(diff) / (diff.size * mag_e)
    sisnr, g_wav = si_snr_and_grad(enhanced_wav, clean_wav)
    return float(np.abs(diff).mean()) - sisnr, coef * yr, coef * yi, -g_wav


def enhancer_loss(model: EnhancerModel, batch: Sequence[tuple[np.ndarray, np.ndarray]],
                  grad: bool = True) -> float:
    """Mean loss over ``(clean, noisy)`` pairs; accumulates mean gradients into ``model.grads``."""
    cfg = model.cfg.stft
    total = 0.0
    for clean, noisy in batch:
        x = stft(noisy, cfg)
        s = stft(clean, cfg)
        y = model.enhance(x)
        wav = istft(y)
        keep = interior(cfg, y.n_frames)
        value, d_re, d_im, d_keep = loss_and_grad(y, s, wav[keep], clean[keep])
        total += value
        if grad:
            d_wav = np.zeros_like(wav)
            d_wav[keep] = d_keep
            g_re, g_im = istft_adjoint(d_wav, cfg, y.n_frames)
            scale = 1.0 / len(batch)
            model.enhance_backward(scale * (d_re + g_re), scale * (d_im + g_im))
    return total / len(batch)


# -- optimizer -------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(weights: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptimizerState) -> tuple[dict, OptimizerState]:
    """AdamW: bias-corrected moments plus decoupled weight decay, applied in place."""
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs weight {w.shape}")
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        w -= state.lr * state.weight_decay * w
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return weights, state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


# -- gradient checking --------------------------------------------------------------

@dataclass
class GradCheckReport:
    names: list[str]
    analytic: np.ndarray
    numeric: np.ndarray
    floor: float

    @property
    def rel_errors(self) -> np.ndarray:
        denom = np.maximum(np.maximum(np.abs(self.analytic), np.abs(self.numeric)), self.floor)
        return np.abs(self.analytic - self.numeric) / denom

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.analytic.size else 0.0

    def ok(self, tol: float) -> bool:
        return self.max_rel_error <= tol


LossFn = Callable[[Module, object, bool], float]


def grad_check(model: Module, batch, n_samples: int, loss_fn: LossFn = enhancer_loss,
               seed: int = 0, h: float = 1e-5, floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients with central differences at ``n_samples`` random weights.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(model.named_parameters())
    model.zero_grad()
    loss_fn(model, batch, True)
    grads = dict(model.named_grads())
    sizes = np.array([p.size for _, p in params])
    rng = make_rng(seed)
    picks = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.cumsum(sizes) - sizes
    names, ana, num = [], [], []
    for flat in np.sort(picks):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p = params[i]
        idx = np.unravel_index(flat - offsets[i], p.shape)
        orig = p[idx]
        p[idx] = orig + h
        up = loss_fn(model, batch, False)
        p[idx] = orig - h
        down = loss_fn(model, batch, False)
        p[idx] = orig
        names.append(f"{name}{list(map(int, idx))}")
        ana.append(grads[name][idx])
        num.append((up - down) / (2 * h))
    return GradCheckReport(names, np.array(ana), np.array(num), floor)


# -- training loop ---------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_sisnr_db: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    noisy_val_sisnr_db: float = float("nan")

    @property
    def best_improvement_db(self) -> float:
        return max(r.val_sisnr_db for r in self.records) - self.noisy_val_sisnr_db

    @property
    def final_improvement_db(self) -> float:
        return self.records[-1].val_sisnr_db - self.noisy_val_sisnr_db

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_sisnr_db"])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_sisnr_db)])
        return buf.getvalue()


def evaluate_sisnr(model: EnhancerModel, pairs) -> tuple[float, float]:
    """Mean interior SI-SNR (dB) of enhanced and of unprocessed noisy signals over ``pairs``."""
    cfg = model.cfg.stft
    enh, base = [], []
    for clean, noisy in pairs:
        y = model.enhance(stft(noisy, cfg))
        keep = interior(cfg, y.n_frames)
        enh.append(si_snr(istft(y)[keep], clean[keep]))
        base.append(si_snr(noisy[keep], clean[keep]))
    return float(np.mean(enh)), float(np.mean(base))


def train_toy(model: EnhancerModel, dataset: ToyDataset, epochs: int, lr: float = 5e-4,
              weight_decay: float = 1e-2, batch_size: int = 1, clip: float = 5.0, seed: int = 0,
              checkpoint: str | Path | None = None, log: Callable[[str], None] | None = None) -> TrainHistory:
    """Train in place; returns per-epoch mean train loss and held-out SI-SNR.

    When ``checkpoint`` is given the model is saved there whenever the
    held-out SI-SNR improves.
    """
    rng = make_rng(seed)
    state = OptimizerState(lr=lr, weight_decay=weight_decay)
    weights = dict(model.named_parameters())
    history = TrainHistory()
    _, history.noisy_val_sisnr_db = evaluate_sisnr(model, dataset.val)
    best = -math.inf
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset.train))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [dataset.train[i] for i in order[start:start + batch_size]]
            model.zero_grad()
            value = enhancer_loss(model, batch)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss is {value} at epoch {epoch}, step {start // batch_size}")
            grads = dict(model.named_grads())
            clip_grad_norm(grads, clip)
            optimizer_step(weights, grads, state)
            losses.append(value)
        val, _ = evaluate_sisnr(model, dataset.val)
        history.records.append(EpochRecord(epoch, float(np.mean(losses)), val))
        if log:
            log(f"epoch {epoch:3d}  loss {np.mean(losses):9.4f}  val SI-SNR {val:7.3f} dB")
        if checkpoint is not None and val > best:
            save_checkpoint(checkpoint, model)
        best = max(best, val)
    return history
