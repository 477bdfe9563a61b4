"""Dense array substrate.

Arrays are plain row-major ``numpy.ndarray`` objects (float64 unless a
caller asks otherwise). This module adds the handful of primitives the rest
of the package needs with explicit shape checking: matrix product, depthwise
2-D cross-correlation with "same" zero padding (and its adjoint), axis
reductions and seeded uniform initialization.

Random numbers come from ``numpy.random.Generator`` on the PCG64 bit
generator, whose stream is fixed for a given seed on every platform.
"""

from __future__ import annotations

import contextlib
from typing import Iterator, Sequence

import numpy as np

from .errors import GeometryError, ShapeError

Tensor = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator."""
    return np.random.Generator(np.random.PCG64(seed))


def rand_init(shape: Sequence[int], rng: np.random.Generator, scale: float) -> Tensor:
    """Uniform draws in ``[-scale, scale]``."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, size=tuple(shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def reduce_sum(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reduce_sum: axis {axis} out of range for rank {x.ndim}")
    return x.sum(axis=axis)


def _check_dw(x: Tensor, w: Tensor) -> tuple[int, int]:
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"dwconv2d expects C×H×W input and C×kh×kw kernel, got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(f"dwconv2d: {x.shape[0]} input channels but {w.shape[0]} kernels")
    kh, kw = w.shape[1:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise GeometryError(f"dwconv2d supports odd kernels only, got {kh}×{kw}")
    return kh, kw


def dwconv2d(x: Tensor, w: Tensor, pad: tuple[int, int] | None = None) -> Tensor:
    """Per-channel 2-D cross-correlation (no kernel flip), zero padded.

    ``pad`` defaults to "same" padding, ``((kh-1)//2, (kw-1)//2)``, which is the
    only padding that keeps the spatial shape and therefore the only one
    accepted.
    """
    kh, kw = _check_dw(x, w)
    same = ((kh - 1) // 2, (kw - 1) // 2)
    if pad is not None and tuple(pad) != same:
        raise GeometryError(f"dwconv2d: padding {tuple(pad)} is not 'same' padding {same} for a {kh}×{kw} kernel")
    ph, pw = same
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros_like(x, dtype=np.result_type(x, w))
    # one shifted multiply-add per kernel tap; fixed tap order keeps results bit-stable
    for a in range(kh):
        for b in range(kw):
            out += w[:, a, b, None, None] * xp[:, a:a + H, b:b + W]
    return out


def dwconv2d_backward(x: Tensor, w: Tensor, dy: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients of ``dwconv2d(x, w)`` with respect to ``x`` and ``w``."""
    kh, kw = _check_dw(x, w)
    if dy.shape != x.shape:
        raise ShapeError(f"dwconv2d_backward: upstream gradient {dy.shape} != output {x.shape}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w, dtype=np.result_type(x, w))
    for a in range(kh):
        for b in range(kw):
            win = xp[:, a:a + H, b:b + W]
            dw[:, a, b] = np.einsum("chw,chw->c", dy, win)
            dxp[:, a:a + H, b:b + W] += w[:, a, b, None, None] * dy
    return dxp[:, ph:ph + H, pw:pw + W], dw


@contextlib.contextmanager
def deterministic(enabled: bool = True) -> Iterator[None]:
    """Pin BLAS/OpenMP pools to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield
