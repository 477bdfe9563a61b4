"""Four-level U-Net speech enhancer built from IDConv embeddings and MALA blocks.

Layout for ``levels = L`` and widths ``w_l = C0 * 2**l`` (l < L)::

    stem        1×1 conv, 3 → C0   (compressed real, imag, magnitude)
    enc[l]      IdConvEmbed(w_l) → MalaBlock(w_l)       → skip_l
    down[l]     2×2/2 conv, w_l → w_{l+1} (the last one keeps w_{L-1})
    bottleneck  MalaBlock(w_{L-1})
    dec[l]      2×2/2 transposed conv → concat skip_l → 1×1 fuse → MalaBlock(w_l)
    head        feature norm → 1×1 conv, C0 → 2   (complex mask logits)

The enhanced spectrogram is ``M * X`` where the bounded complex ratio mask is
built from the head output ``z`` as ``u + iv = (1 + z_r) + i z_i`` rescaled
to magnitude ``B * tanh(c * |u + iv|)`` with ``c = atanh(1/B)``. A zero head
therefore yields exactly ``M = 1`` (the identity), magnitudes stay below
``B`` and the phase of ``u + iv`` rotates the input.

Inputs are reflect-padded on both axes to a multiple of ``2**L`` and the
mask is cropped back, so any number of frames is accepted.

Checkpoint file layout (all little-endian)::

    b"IMSE" | u32 version | u32 n | n bytes of JSON config | u64 count | count × f64
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .idconv import IdConvConfig
from .layers import ATTENTION_AXES, FeatureNorm, Downsample, IdConvEmbed, MalaBlock, Module, Pointwise, Upsample
from .spectral import ComplexSpectrogram, StftConfig
from .tensor import Tensor, make_rng

IN_CHANNELS = 3
MAGIC = b"IMSE"
FORMAT_VERSION = 1

# Reported totals (millions) for context only; the published block internals
# are not recoverable, so nothing here is expected to match them.
REFERENCE_PARAMS_M = {
    "MUSE (base)": 0.513,
    "+ MALA (replaces MET)": 0.438,
    "+ IDConv (replaces DE)": 0.501,
    "IMSE": 0.427,
}


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    levels: int = 4
    heads: int | tuple[int, ...] = 2
    ffn_expansion: int = 2
    attention_axis: str = "tf"
    idconv_ratio: float | None = None  # None: equal four-way split
    square_kernel: int = 3
    band_kernel: int = 11
    mask_bound: float = 2.0
    compress: float = 0.3
    zero_head: bool = False
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1:
            raise ConfigError("levels and base_channels must be positive")
        if isinstance(self.heads, (list, tuple)):
            object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
            if len(self.heads) != self.levels:
                raise ConfigError(f"{len(self.heads)} head counts given for {self.levels} levels")
        if self.attention_axis not in ATTENTION_AXES:
            raise ConfigError(f"attention_axis must be one of {ATTENTION_AXES}")
        if not self.mask_bound > 1.0:
            raise ConfigError("mask_bound must exceed 1 so the identity mask is reachable")
        if self.ffn_expansion < 1:
            raise ConfigError("ffn_expansion must be >= 1")
        for lvl, w in enumerate(self.widths):
            if w % self.heads_at(lvl):
                raise ConfigError(f"width {w} at level {lvl} is not divisible by {self.heads_at(lvl)} heads")
            self.idconv_config(lvl)

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2**lvl for lvl in range(self.levels)]

    @property
    def multiple(self) -> int:
        return 2**self.levels

    def heads_at(self, level: int) -> int:
        if isinstance(self.heads, tuple):
            return self.heads[min(level, self.levels - 1)]
        return self.heads

    def idconv_config(self, level: int) -> IdConvConfig:
        c = self.widths[level]
        kw = dict(square_kernel=self.square_kernel, band_kernel=self.band_kernel)
        if self.idconv_ratio is None:
            return IdConvConfig.equal(c, **kw)
        return IdConvConfig.with_ratio(c, self.idconv_ratio, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heads"] = list(self.heads) if isinstance(self.heads, tuple) else self.heads
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "stft" in d:
            d["stft"] = StftConfig(**d["stft"])
        if isinstance(d.get("heads"), list):
            d["heads"] = tuple(d["heads"])
        return cls(**d)


PRESETS = {
    "full": ModelConfig(),
    "tiny": ModelConfig(base_channels=4, levels=1, heads=1),
    "micro": ModelConfig(base_channels=2, levels=1, heads=1, ffn_expansion=1),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def spectral_features(spec: ComplexSpectrogram, compress: float) -> Tensor:
    """3×F×T network input: power-law compressed real, imaginary and magnitude."""
    mag = np.sqrt(spec.real**2 + spec.imag**2 + 1e-12)
    scale = mag ** (compress - 1.0)
    return np.stack([spec.real * scale, spec.imag * scale, mag**compress])


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, level: int, rng):
        super().__init__()
        w = cfg.widths[level]
        self.embed = self.add("embed", IdConvEmbed(cfg.idconv_config(level), rng))
        self.block = self.add("block", MalaBlock(w, cfg.heads_at(level), cfg.attention_axis, cfg.ffn_expansion, rng))

    def forward(self, x):
        return self.block.forward(self.embed.forward(x))

    def backward(self, dy):
        return self.embed.backward(self.block.backward(dy))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, level: int, rng):
        super().__init__()
        w = cfg.widths[level]
        w_below = cfg.widths[min(level + 1, cfg.levels - 1)]
        self.up = self.add("up", Upsample(w_below, w, rng))
        self.fuse = self.add("fuse", Pointwise(2 * w, w, rng))
        self.block = self.add("block", MalaBlock(w, cfg.heads_at(level), cfg.attention_axis, cfg.ffn_expansion, rng))
        self._w = w

    def forward(self, x, skip):
        x = np.concatenate([self.up.forward(x), skip], axis=0)
        return self.block.forward(self.fuse.forward(x))

    def backward(self, dy):
        d = self.fuse.backward(self.block.backward(dy))
        return self.up.backward(d[:self._w]), d[self._w:]


class MaskHead(Module):
    """Final feature norm then 1×1 projection to two mask logits.

    Attention weights here are row-normalised but not convex, so block
    outputs grow with the number of tokens; the norm keeps the logits in the
    unsaturated range of the mask nonlinearity.
    """

    def __init__(self, c: int, rng, zero: bool):
        super().__init__()
        self.norm = self.add("norm", FeatureNorm(c))
        self.proj = self.add("proj", Pointwise(c, 2, rng, zero=zero))

    def forward(self, x):
        return self.proj.forward(self.norm.forward(x))

    def backward(self, dy):
        return self.norm.backward(self.proj.backward(dy))


class EnhancerModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        self.stem = self.add("stem", Pointwise(IN_CHANNELS, widths[0], rng))
        self.enc, self.down, self.dec = [], [], []
        for lvl in range(cfg.levels):
            self.enc.append(self.add(f"enc{lvl}", Encoder(cfg, lvl, rng)))
            nxt = widths[min(lvl + 1, cfg.levels - 1)]
            self.down.append(self.add(f"down{lvl}", Downsample(widths[lvl], nxt, rng)))
        self.bottleneck = self.add(
            "bottleneck", MalaBlock(widths[-1], cfg.heads_at(cfg.levels - 1), cfg.attention_axis, cfg.ffn_expansion, rng))
        self.dec = [None] * cfg.levels
        for lvl in reversed(range(cfg.levels)):
            self.dec[lvl] = self.add(f"dec{lvl}", Decoder(cfg, lvl, rng))
        self.head = self.add("head", MaskHead(widths[0], rng, zero=cfg.zero_head))

    # -- network on padded feature maps -------------------------------------

    def forward(self, feats: Tensor) -> Tensor:
        x = self.stem.forward(feats)
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc.forward(x)
            skips.append(x)
            x = down.forward(x)
        x = self.bottleneck.forward(x)
        for lvl in reversed(range(self.cfg.levels)):
            x = self.dec[lvl].forward(x, skips[lvl])
        return self.head.forward(x)

    def backward(self, dz: Tensor) -> Tensor:
        d = self.head.backward(dz)
        dskips = [None] * self.cfg.levels
        for lvl in range(self.cfg.levels):
            d, dskips[lvl] = self.dec[lvl].backward(d)
        d = self.bottleneck.backward(d)
        for lvl in reversed(range(self.cfg.levels)):
            d = self.down[lvl].backward(d)
            d = self.enc[lvl].backward(d + dskips[lvl])
        return self.stem.backward(d)

    # -- spectrogram in, spectrogram out ---------------------------------------

    def _pad(self, feats: Tensor) -> Tensor:
        m = self.cfg.multiple
        _, f, t = feats.shape
        return np.pad(feats, ((0, 0), (0, -f % m), (0, -t % m)), mode="reflect")

    def enhance(self, spec: ComplexSpectrogram) -> ComplexSpectrogram:
        """Apply the predicted mask; caches what ``enhance_backward`` needs."""
        f, t = spec.shape
        z = self.forward(self._pad(spectral_features(spec, self.cfg.compress)))
        self._zshape = z.shape
        mr, mi, self._mask_cache = mask_from_logits(z[:, :f, :t], self.cfg.mask_bound)
        self._x = (spec.real, spec.imag)
        xr, xi = self._x
        return ComplexSpectrogram(mr * xr - mi * xi, mr * xi + mi * xr, spec.cfg)

    def enhance_backward(self, d_real: Tensor, d_imag: Tensor) -> None:
        xr, xi = self._x
        dmr = d_real * xr + d_imag * xi
        dmi = -d_real * xi + d_imag * xr
        dz = np.zeros(self._zshape)
        f, t = d_real.shape
        dz[:, :f, :t] = mask_backward(dmr, dmi, self._mask_cache)
        self.backward(dz)


def mask_from_logits(z: Tensor, bound: float):
    """Bounded complex ratio mask; returns ``(real, imag, cache)``."""
    c = np.arctanh(1.0 / bound)
    u, v = 1.0 + z[0], z[1]
    r = np.sqrt(u * u + v * v + 1e-18)
    th = np.tanh(c * r)
    k = bound * th / r
    return u * k, v * k, (u, v, r, th, k, c, bound)


def mask_backward(dmr: Tensor, dmi: Tensor, cache) -> Tensor:
    u, v, r, th, k, c, bound = cache
    dk_dr = (bound * c * (1.0 - th * th) - k) / r
    # dM/du = k + u * dk/dr * u/r, and likewise for v
    proj = (dmr * u + dmi * v) * dk_dr / r
    return np.stack([dmr * k + proj * u, dmi * k + proj * v])


def build_model(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> EnhancerModel:
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(int(rng))
    return EnhancerModel(cfg, rng)


def forward_enhance(model: EnhancerModel, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    return model.enhance(spec)


# -- parameter accounting ------------------------------------------------------

@dataclass(frozen=True)
class ParamReport:
    embedding: int
    attention: int
    resampling: int
    head: int

    @property
    def total(self) -> int:
        return self.embedding + self.attention + self.resampling + self.head

    def as_dict(self) -> dict:
        return {"embedding": self.embedding, "attention": self.attention,
                "resampling": self.resampling, "head": self.head, "total": self.total}


def _category(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "stem" or (len(parts) > 1 and parts[1] == "embed"):
        return "embedding"
    if parts[0] == "bottleneck" or (len(parts) > 1 and parts[1] == "block"):
        return "attention"
    if parts[0] == "head":
        return "head"
    return "resampling"


def count_params(model: Module) -> ParamReport:
    counts = dict(embedding=0, attention=0, resampling=0, head=0)
    for name, p in model.named_parameters():
        counts[_category(name)] += p.size
    return ParamReport(**counts)


# -- checkpoints -----------------------------------------------------------------

def flatten_params(model: Module) -> Tensor:
    return np.concatenate([p.ravel() for _, p in model.named_parameters()])


def load_flat_params(model: Module, flat: Tensor) -> None:
    n = model.num_params()
    if flat.size != n:
        raise CheckpointError(f"checkpoint holds {flat.size} weights, model needs {n}")
    i = 0
    for _, p in model.named_parameters():
        p[...] = flat[i:i + p.size].reshape(p.shape)
        i += p.size


def save_checkpoint(path: str | Path, model: EnhancerModel) -> None:
    cfg = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    flat = flatten_params(model).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


def load_checkpoint(path: str | Path) -> EnhancerModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an IMSE checkpoint (bad magic)")
    try:
        version, n = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
        cfg = ModelConfig.from_dict(json.loads(data[12:12 + n].decode("utf-8")))
        (count,) = struct.unpack_from("<Q", data, 12 + n)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    start = 20 + n
    if len(data) - start != 8 * count:
        raise CheckpointError(f"{path}: expected {count} weights, found {(len(data) - start) / 8:g}")
    model = build_model(cfg, 0)
    load_flat_params(model, np.frombuffer(data, dtype="<f8", offset=start).astype(float))
    return model
