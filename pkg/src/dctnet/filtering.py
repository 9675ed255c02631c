"""Symmetric convolution and its diagonal form in the cosine domain.

A length-K half-kernel w defines the palindromic filter

    wt_k = w_{|K - 1 - k|},  k = 0 .. 2K-2

applied under half-sample symmetric boundary extension
(x_{-1-j} = x_j and x_{N+j} = x_{N-1-j}).  That spatial operation is exactly
a per-coefficient multiply between the forward and inverse transforms:

    idct1d(dct1d(x) * V) == sym_conv_spatial(x, w)
    V_k = w_0 + 2 sum_{m>=1} w_m cos(pi k m / N)

`sym_conv_spatial` is the deliberately plain oracle the identity is tested
against.  `dct_filter_2d` applies a separable 2D multiplier mask, and
`dct_downsample` halves resolution by truncating the coefficient block
before the inverse transform (rescaled so constants survive).
"""

from __future__ import annotations

import numpy as np

from .dct import dct1d, dct2d, idct1d, idct2d, dct2d_op, idct2d_op, make_plan
from .tensor import Tensor, apply_op

__all__ = [
    "extend_kernel",
    "sym_conv_spatial",
    "kernel_to_multipliers",
    "dct_filter_2d",
    "dct_downsample",
    "dct_downsample_op",
]


def extend_kernel(w: np.ndarray) -> np.ndarray:
    """Mirror a half-kernel of length K into its palindrome of length 2K-1."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"half-kernel must be a nonempty vector, got shape {w.shape}")
    k = w.size
    idx = np.abs(k - 1 - np.arange(2 * k - 1))
    return w[idx]


def sym_conv_spatial(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Symmetric convolution along the last axis, computed in the signal domain.

    Reference implementation: extend the input half-sample symmetrically,
    slide the palindromic kernel.  Kept simple on purpose; it is the oracle
    for the transform-domain path.
    """
    x = np.asarray(x, dtype=np.float64)
    wt = extend_kernel(w)
    k = (wt.size + 1) // 2
    n = x.shape[-1]
    if k - 1 > n:
        raise ValueError(f"kernel half-length {k} exceeds signal length {n}")
    pad = [(0, 0)] * (x.ndim - 1) + [(k - 1, k - 1)]
    xp = np.pad(x, pad, mode="symmetric")
    out = np.zeros_like(x)
    for m, wm in enumerate(wt):
        out += wm * xp[..., m : m + n]
    return out


def kernel_to_multipliers(w: np.ndarray, n: int) -> np.ndarray:
    """Spectral multipliers V of length n equivalent to symmetric convolution by w."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"half-kernel must be a nonempty vector, got shape {w.shape}")
    k = np.arange(n)[:, None]
    m = np.arange(1, w.size)[None, :]
    v = np.full(n, w[0])
    if w.size > 1:
        v = v + 2.0 * (np.cos(np.pi * k * m / n) @ w[1:])
    return v


def dct_filter_2d(x: np.ndarray, multipliers: np.ndarray) -> np.ndarray:
    """Filter the last two axes through the transform: idct2d(dct2d(x) * V).

    `multipliers` is an (H, W) mask; a separable mask is the outer product of
    two 1D multiplier vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2], x.shape[-1]
    multipliers = np.asarray(multipliers, dtype=np.float64)
    if multipliers.shape != (h, w):
        raise ValueError(f"multiplier mask must be {(h, w)}, got {multipliers.shape}")
    plan_h, plan_w = make_plan(h), make_plan(w)
    return idct2d(dct2d(x, plan_h, plan_w) * multipliers, plan_h, plan_w)


def _check_downsamplable(h: int, w: int):
    if h != w:
        raise ValueError(f"downsampling expects square inputs, got {h}x{w}")
    if h % 2:
        raise ValueError(f"downsampling needs an even size, got {h}")


def dct_downsample(x: np.ndarray) -> np.ndarray:
    """Halve the last two axes by keeping the top-left coefficient quarter.

    The kept block is scaled by 1/4 so the unnormalized inverse at half size
    reproduces constants exactly (X_00 carries a factor N^2).
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2], x.shape[-1]
    _check_downsamplable(h, w)
    m = h // 2
    full = make_plan(h)
    halfp = make_plan(m)
    coeff = dct2d(x, full, full)[..., :m, :m] * 0.25
    return idct2d(coeff, halfp, halfp)


def _crop_quarter_op(x: Tensor) -> Tensor:
    """Keep the top-left quarter of the last two axes, scaled by 1/4."""
    h, w = x.shape[2], x.shape[3]
    m = h // 2
    out = x.data[..., :m, :m] * 0.25

    def bwd(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., :m, :m] = g * 0.25
        return (gx,)

    return apply_op(out, (x,), bwd)


def dct_downsample_op(x: Tensor) -> Tensor:
    """Differentiable version of `dct_downsample` for (B, C, N, N) tensors."""
    h, w = x.shape[2], x.shape[3]
    _check_downsamplable(h, w)
    full = make_plan(h)
    halfp = make_plan(h // 2)
    return idct2d_op(_crop_quarter_op(dct2d_op(x, full, full)), halfp, halfp)
