"""Layers with hand-written backward passes.

Every layer works on a single C×H×W feature map (H = frequency, W = time).
``forward`` caches what ``backward`` needs; ``backward`` returns the input
gradient and *accumulates* parameter gradients into ``grads`` so that several
examples can be summed before an optimizer step. Parameters live in ordered
dicts, so the flattened layout (``named_parameters``) is deterministic.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ConfigError
from .idconv import IdConvConfig, idconv_backward, idconv_forward, init_idconv_weights
from .mala import mala_backward, mala_linear
from .tensor import Tensor

ATTENTION_AXES = ("tf", "time", "freq")


class Module:
    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}
        self.children: dict[str, Module] = {}

    def add(self, name: str, child: "Module") -> "Module":
        self.children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in self.params:
            yield prefix + name, self.grads[name]
        for cname, child in self.children.items():
            yield from child.named_grads(f"{prefix}{cname}.")

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for child in self.children.values():
            child.zero_grad()

    def _acc(self, name: str, g: Tensor) -> None:
        self.grads[name] += g

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _uniform(rng, shape, fan_in):
    return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)


class Pointwise(Module):
    """1×1 convolution: ``y = W x + b`` over channels."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, zero: bool = False):
        super().__init__()
        self.params["w"] = np.zeros((cout, cin)) if zero else _uniform(rng, (cout, cin), cin)
        self.params["b"] = np.zeros(cout)
        self.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        self._x = x.reshape(c, h * w)
        y = self.params["w"] @ self._x + self.params["b"][:, None]
        return y.reshape(-1, h, w)

    def backward(self, dy: Tensor) -> Tensor:
        c, h, w = dy.shape
        d = dy.reshape(c, h * w)
        self._acc("w", d @ self._x.T)
        self._acc("b", d.sum(axis=1))
        return (self.params["w"].T @ d).reshape(-1, h, w)


class Downsample(Module):
    """2×2 convolution with stride 2 (non-overlapping patches)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.params["w"] = _uniform(rng, (cout, cin, 2, 2), cin * 4)
        self.params["b"] = np.zeros(cout)
        self.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        self._shape = x.shape
        self._patches = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 2, 4, 1, 3).reshape(c * 4, -1)
        wm = self.params["w"].reshape(self.params["w"].shape[0], -1)
        y = wm @ self._patches + self.params["b"][:, None]
        return y.reshape(-1, h // 2, w // 2)

    def backward(self, dy: Tensor) -> Tensor:
        c, h, w = self._shape
        cout = dy.shape[0]
        d = dy.reshape(cout, -1)
        wm = self.params["w"].reshape(cout, -1)
        self._acc("w", (d @ self._patches.T).reshape(self.params["w"].shape))
        self._acc("b", d.sum(axis=1))
        dp = (wm.T @ d).reshape(c, 2, 2, h // 2, w // 2)
        return dp.transpose(0, 3, 1, 4, 2).reshape(c, h, w)


class Upsample(Module):
    """2×2 transposed convolution with stride 2; weight layout ``cin×cout×2×2``."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.params["w"] = _uniform(rng, (cin, cout, 2, 2), cin)
        self.params["b"] = np.zeros(cout)
        self.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        self._x = x.reshape(c, h * w)
        cout = self.params["w"].shape[1]
        wm = self.params["w"].reshape(c, cout * 4)
        y = (wm.T @ self._x).reshape(cout, 2, 2, h, w).transpose(0, 3, 1, 4, 2).reshape(cout, 2 * h, 2 * w)
        return y + self.params["b"][:, None, None]

    def backward(self, dy: Tensor) -> Tensor:
        cout, h2, w2 = dy.shape
        cin = self.params["w"].shape[0]
        d = dy.reshape(cout, h2 // 2, 2, w2 // 2, 2).transpose(0, 2, 4, 1, 3).reshape(cout * 4, -1)
        wm = self.params["w"].reshape(cin, cout * 4)
        self._acc("w", (self._x @ d.T).reshape(self.params["w"].shape))
        self._acc("b", dy.sum(axis=(1, 2)))
        return (wm @ d).reshape(cin, h2 // 2, w2 // 2)


class FeatureNorm(Module):
    """Normalise over the whole C×H×W map (one-group GroupNorm), per-channel affine.

    Statistics are shared across positions so relative magnitudes between
    time-frequency bins survive, which a mask estimator depends on.
    """

    eps = 1e-5

    def __init__(self, c: int):
        super().__init__()
        self.params["g"] = np.ones(c)
        self.params["b"] = np.zeros(c)
        self.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        xc = x - x.mean()
        self._rstd = 1.0 / np.sqrt((xc**2).mean() + self.eps)
        self._xhat = xc * self._rstd
        return self.params["g"][:, None, None] * self._xhat + self.params["b"][:, None, None]

    def backward(self, dy: Tensor) -> Tensor:
        xhat = self._xhat
        self._acc("g", (dy * xhat).sum(axis=(1, 2)))
        self._acc("b", dy.sum(axis=(1, 2)))
        dxhat = dy * self.params["g"][:, None, None]
        return self._rstd * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean())


class FeedForward(Module):
    """Pointwise expand → SiLU → pointwise project."""

    def __init__(self, c: int, expansion: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = self.add("fc1", Pointwise(c, c * expansion, rng))
        self.fc2 = self.add("fc2", Pointwise(c * expansion, c, rng))

    def forward(self, x: Tensor) -> Tensor:
        h = self.fc1.forward(x)
        self._h = h
        self._sig = 1.0 / (1.0 + np.exp(-h))
        return self.fc2.forward(h * self._sig)

    def backward(self, dy: Tensor) -> Tensor:
        da = self.fc2.backward(dy)
        sig, h = self._sig, self._h
        return self.fc1.backward(da * sig * (1.0 + h * (1.0 - sig)))


class IdConvEmbed(Module):
    """Inception depthwise branches followed by a 1×1 channel mix (with bias)."""

    def __init__(self, cfg: IdConvConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.params.update(init_idconv_weights(cfg, rng))
        self.zero_grad()
        self.mix = self.add("mix", Pointwise(cfg.channels, cfg.channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return self.mix.forward(idconv_forward(x, self.params, self.cfg))

    def backward(self, dy: Tensor) -> Tensor:
        dz = self.mix.backward(dy)
        dx, g = idconv_backward(self._x, self.params, self.cfg, dz)
        for name, v in g.items():
            self._acc(name, v)
        return dx


def fold_tokens(t: Tensor, axis: str) -> Tensor:
    """Per-head map ``dh×H×W`` → token matrix used by the attention."""
    dh, h, w = t.shape
    if axis == "tf":
        return t.reshape(dh, h * w).T
    if axis == "time":
        return t.transpose(2, 0, 1).reshape(w, dh * h)
    return t.transpose(1, 0, 2).reshape(h, dh * w)


def unfold_tokens(tok: Tensor, axis: str, shape: tuple[int, int, int]) -> Tensor:
    dh, h, w = shape
    if axis == "tf":
        return tok.T.reshape(dh, h, w)
    if axis == "time":
        return tok.reshape(w, dh, h).transpose(1, 2, 0)
    return tok.reshape(h, dh, w).transpose(1, 0, 2)


class MalaAttention(Module):
    """Multi-head amplitude-aware linear attention on a feature map.

    Q, K, V and output projections are 1×1 (shared over positions) and use
    the right-multiplied convention ``tokens @ w + b``. Channels are split
    into heads; each head's ``dh×H×W`` slab is turned into a sequence by
    ``axis``: ``"tf"`` gives one token per time-frequency bin (``dh``
    features), ``"time"`` one token per frame (frequency folded into the
    features) and ``"freq"`` one token per bin.
    """

    def __init__(self, c: int, heads: int, axis: str, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or c % heads:
            raise ConfigError(f"{c} channels are not divisible by {heads} heads")
        if axis not in ATTENTION_AXES:
            raise ConfigError(f"attention axis must be one of {ATTENTION_AXES}, got {axis!r}")
        self.heads, self.axis = heads, axis
        for name in ("q", "k", "v", "o"):
            self.params["w" + name] = _uniform(rng, (c, c), c)
            self.params["b" + name] = np.zeros(c)
        self.zero_grad()

    def _heads(self, proj: Tensor, h: int, w: int):
        dh = proj.shape[1] // self.heads
        for i in range(self.heads):
            yield fold_tokens(proj[:, i * dh:(i + 1) * dh].T.reshape(dh, h, w), self.axis)

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        p = self.params
        tok = x.reshape(c, h * w).T
        q, k, v = (tok @ p["w" + n] + p["b" + n] for n in "qkv")
        dh = c // self.heads
        att = np.empty_like(q)
        for i, (qi, ki, vi) in enumerate(zip(self._heads(q, h, w), self._heads(k, h, w), self._heads(v, h, w))):
            yi = mala_linear(qi, ki, vi)
            att[:, i * dh:(i + 1) * dh] = unfold_tokens(yi, self.axis, (dh, h, w)).reshape(dh, h * w).T
        self._cache = (tok, q, k, v, att)
        return (att @ p["wo"] + p["bo"]).T.reshape(c, h, w)

    def backward(self, dy: Tensor) -> Tensor:
        c, h, w = dy.shape
        p = self.params
        tok, q, k, v, att = self._cache
        d = dy.reshape(c, h * w).T
        self._acc("wo", att.T @ d)
        self._acc("bo", d.sum(axis=0))
        datt = d @ p["wo"].T
        dh = c // self.heads
        dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
        heads = zip(self._heads(q, h, w), self._heads(k, h, w), self._heads(v, h, w), self._heads(datt, h, w))
        for i, (qi, ki, vi, gi) in enumerate(heads):
            cols = slice(i * dh, (i + 1) * dh)
            for out, g in zip((dq, dk, dv), mala_backward(qi, ki, vi, gi)):
                out[:, cols] = unfold_tokens(g, self.axis, (dh, h, w)).reshape(dh, h * w).T
        dtok = np.zeros_like(tok)
        for n, g in (("q", dq), ("k", dk), ("v", dv)):
            self._acc("w" + n, tok.T @ g)
            self._acc("b" + n, g.sum(axis=0))
            dtok += g @ p["w" + n].T
        return dtok.T.reshape(c, h, w)


class MalaBlock(Module):
    """norm → attention → residual → norm → feed-forward → residual."""

    def __init__(self, c: int, heads: int, axis: str, expansion: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = self.add("norm1", FeatureNorm(c))
        self.attn = self.add("attn", MalaAttention(c, heads, axis, rng))
        self.norm2 = self.add("norm2", FeatureNorm(c))
        self.ffn = self.add("ffn", FeedForward(c, expansion, rng))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn.forward(self.norm1.forward(x))
        return x + self.ffn.forward(self.norm2.forward(x))

    def backward(self, dy: Tensor) -> Tensor:
        dx = dy + self.norm2.backward(self.ffn.backward(dy))
        return dx + self.norm1.backward(self.attn.backward(dx))
