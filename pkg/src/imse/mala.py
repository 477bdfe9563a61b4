"""Amplitude-aware linear attention.

For query row ``i`` with positive feature map ``phi``::

    s_i     = phi(Q_i) . sum_m phi(K_m)
    beta_i  = 1 + 1 / s_i
    gamma_i = s_i / N
    A_ij    = beta_i * phi(Q_i) . phi(K_j) - gamma_i
    Y_i     = sum_j A_ij V_j
            = beta_i * phi(Q_i) @ (phi(K)^T V) - gamma_i * sum_j V_j

Every row of ``A`` sums to exactly one (``beta*s - N*gamma = 1``) but, unlike
softmax, individual weights may be negative. No clamping is applied.

``mala_quadratic`` builds ``A`` explicitly and is the reference path;
``mala_linear`` uses the two context aggregates and is O(N) in sequence
length. Queries and keys may have different row counts; ``N`` is always the
number of keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptySequenceError, ShapeError
from .tensor import Tensor

S_FLOOR = 1e-6


def phi(x: Tensor) -> Tensor:
    """``elu(x) + 1``; strictly positive."""
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def phi_grad(x: Tensor) -> Tensor:
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class MalaContext:
    kv: Tensor    # d×dv, sum_j phi(K_j)^T V_j
    vsum: Tensor  # dv,   sum_j V_j
    ksum: Tensor  # d,    sum_m phi(K_m)
    n: int


@dataclass(frozen=True)
class MalaScalars:
    s: Tensor
    beta: Tensor
    gamma: Tensor


def _check(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"expected 2-D Q, K, V; got {q.shape}, {k.shape}, {v.shape}")
    if k.shape[0] == 0 or q.shape[0] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"Q and K feature sizes differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K and V lengths differ: {k.shape} vs {v.shape}")


def mala_context(k: Tensor, v: Tensor) -> MalaContext:
    if k.ndim != 2 or v.ndim != 2 or k.shape[0] != v.shape[0]:
        raise ShapeError(f"K and V must be N×d and N×dv, got {k.shape} and {v.shape}")
    if k.shape[0] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    fk = phi(k)
    return MalaContext(kv=fk.T @ v, vsum=v.sum(axis=0), ksum=fk.sum(axis=0), n=k.shape[0])


def mala_scalars(phi_q: Tensor, ksum: Tensor, n: int) -> MalaScalars:
    """Per-query ``s``, ``beta`` and ``gamma`` from post-kernel queries."""
    s = np.maximum(phi_q @ ksum, S_FLOOR)
    return MalaScalars(s=s, beta=1.0 + 1.0 / s, gamma=s / n)


def mala_quadratic(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Reference path: returns ``(Y, A)`` with the full M×N score matrix."""
    _check(q, k, v)
    fq, fk = phi(q), phi(k)
    sc = mala_scalars(fq, fk.sum(axis=0), k.shape[0])
    a = sc.beta[:, None] * (fq @ fk.T) - sc.gamma[:, None]
    return a @ v, a


def mala_linear(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    _check(q, k, v)
    ctx = mala_context(k, v)
    fq = phi(q)
    sc = mala_scalars(fq, ctx.ksum, ctx.n)
    return sc.beta[:, None] * (fq @ ctx.kv) - sc.gamma[:, None] * ctx.vsum


def mala_backward(q: Tensor, k: Tensor, v: Tensor, dy: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients of ``sum(dy * mala_linear(q, k, v))``; beta and gamma are differentiated through."""
    _check(q, k, v)
    if dy.shape != (q.shape[0], v.shape[1]):
        raise ShapeError(f"upstream gradient {dy.shape} does not match output {(q.shape[0], v.shape[1])}")
    n = k.shape[0]
    fq, fk = phi(q), phi(k)
    ksum = fk.sum(axis=0)
    kv = fk.T @ v
    vsum = v.sum(axis=0)
    raw_s = fq @ ksum
    sc = mala_scalars(fq, ksum, n)
    p = fq @ kv

    dp = sc.beta[:, None] * dy
    dbeta = np.einsum("ij,ij->i", dy, p)
    dgamma = -(dy @ vsum)
    ds = -dbeta / sc.s**2 + dgamma / n
    ds = np.where(raw_s > S_FLOOR, ds, 0.0)

    dfq = dp @ kv.T + ds[:, None] * ksum
    dkv = fq.T @ dp
    dksum = fq.T @ ds
    dvsum = -(sc.gamma @ dy)

    dfk = v @ dkv.T + dksum
    dv = fk @ dkv + dvsum
    return dfq * phi_grad(q), dfk * phi_grad(k), dv


def attention_gap(q: Tensor, k: Tensor, v: Tensor, query_index: int, t: float) -> float:
    """Spread ``max_j A_ij - min_j A_ij`` after scaling the post-kernel row ``phi(Q_i)`` by ``t``."""
    _check(q, k, v)
    if not t > 0:
        raise ValueError("t must be positive")
    fq = t * phi(q[query_index])
    fk = phi(k)
    sc = mala_scalars(fq[None, :], fk.sum(axis=0), k.shape[0])
    row = sc.beta[0] * (fk @ fq) - sc.gamma[0]
    return float(row.max() - row.min())


# -- multi-head wrapper over a plain N×D token sequence -----------------------

HEAD_WEIGHTS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def init_multihead_weights(dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    scale = 1.0 / np.sqrt(dim)
    w = {}
    for name in ("q", "k", "v", "o"):
        w["w" + name] = rng.uniform(-scale, scale, size=(dim, dim))
        w["b" + name] = np.zeros(dim)
    return w


def _split_heads(dim: int, heads: int) -> int:
    if heads < 1 or dim % heads:
        raise ConfigError(f"model width {dim} is not divisible by {heads} heads")
    return dim // heads


def multihead_mala(x: Tensor, weights: dict[str, Tensor], heads: int) -> Tensor:
    """Project ``x`` (N×D) to per-head Q, K, V, attend with ``mala_linear``, concat, project out.

    Projections are right-multiplied: ``Q = x @ wq + bq``.
    """
    dh = _split_heads(x.shape[1], heads)
    q = x @ weights["wq"] + weights["bq"]
    k = x @ weights["wk"] + weights["bk"]
    v = x @ weights["wv"] + weights["bv"]
    out = np.concatenate(
        [mala_linear(q[:, h * dh:(h + 1) * dh], k[:, h * dh:(h + 1) * dh], v[:, h * dh:(h + 1) * dh])
         for h in range(heads)],
        axis=1,
    )
    return out @ weights["wo"] + weights["bo"]


def multihead_mala_backward(x: Tensor, weights: dict[str, Tensor], heads: int,
                            dy: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    dh = _split_heads(x.shape[1], heads)
    q = x @ weights["wq"] + weights["bq"]
    k = x @ weights["wk"] + weights["bk"]
    v = x @ weights["wv"] + weights["bv"]
    cols = [slice(h * dh, (h + 1) * dh) for h in range(heads)]
    att = np.concatenate([mala_linear(q[:, c], k[:, c], v[:, c]) for c in cols], axis=1)

    grads = {"wo": att.T @ dy, "bo": dy.sum(axis=0)}
    datt = dy @ weights["wo"].T
    dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for c in cols:
        dq[:, c], dk[:, c], dv[:, c] = mala_backward(q[:, c], k[:, c], v[:, c], datt[:, c])
    dx = np.zeros_like(x)
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        grads["w" + name] = x.T @ d
        grads["b" + name] = d.sum(axis=0)
        dx += d @ weights["w" + name].T
    return dx, grads
