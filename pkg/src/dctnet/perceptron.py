"""The learnable spectral layer: scale, mix, shrink between a DCT/IDCT pair.

One pod transforms the coefficient block Xd as

    S_T((Xd * V) H)

with V an elementwise (N x N) scale, H a pointwise channel mixer, and S_T
soft thresholding with a learnable nonnegative threshold map T.  A layer
computes the forward transform once, runs P pods on the shared
coefficients, sums them in the transform domain, applies one inverse
transform, and optionally adds the input back:

    y = idct2d(sum_p pod_p(dct2d(x))) [+ x]

Thresholding variants: "soft_threshold" (default), "relu_thresholded"
(max(z - T, 0)), and "relu_bias" (plain ReLU, threshold dropped, bias on
the mixer instead).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dct import dct2d_op, idct2d_op, make_plan
from .tensor import Parameter, Tensor, add, apply_op, conv1x1, relu, scale_broadcast

__all__ = [
    "NONLINEARITIES",
    "soft_threshold",
    "relu_threshold",
    "PodParams",
    "DctPerceptronConfig",
    "init_pods",
    "pod_forward",
    "layer_forward",
]

NONLINEARITIES = ("soft_threshold", "relu_thresholded", "relu_bias")


def soft_threshold(x: Tensor, t: Tensor) -> Tensor:
    """Shrink toward zero: sign(x) * max(|x| - t, 0), t broadcast over B and C.

    Inside the dead zone both derivatives vanish; outside, d/dx = 1 and
    d/dt = -sign(x).
    """
    if t.shape != (1, 1) + x.shape[2:]:
        raise ValueError(f"threshold map must be (1, 1, {x.shape[2]}, {x.shape[3]}), got {t.shape}")
    xd, td = x.data, t.data
    sign = np.sign(xd)
    mag = np.abs(xd) - td
    alive = mag > 0
    out = np.where(alive, sign * mag, 0)

    def bwd(g):
        gx = np.where(alive, g, 0)
        gt = -(g * sign * alive).sum(axis=(0, 1), keepdims=True)
        return gx, gt

    return apply_op(out, (x, t), bwd)


def relu_threshold(x: Tensor, t: Tensor) -> Tensor:
    """One-sided variant: max(x - t, 0), t broadcast over B and C."""
    if t.shape != (1, 1) + x.shape[2:]:
        raise ValueError(f"threshold map must be (1, 1, {x.shape[2]}, {x.shape[3]}), got {t.shape}")
    diff = x.data - t.data
    alive = diff > 0
    out = np.where(alive, diff, 0)

    def bwd(g):
        gx = np.where(alive, g, 0)
        gt = -(g * alive).sum(axis=(0, 1), keepdims=True)
        return gx, gt

    return apply_op(out, (x, t), bwd)


@dataclass
class PodParams:
    """Parameters of one pod; threshold/bias presence depends on the variant."""

    scale: Parameter
    mix: Parameter
    threshold: Parameter | None = None
    bias: Parameter | None = None

    def named(self):
        out = [("scale", self.scale), ("mix", self.mix)]
        if self.threshold is not None:
            out.append(("threshold", self.threshold))
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


@dataclass
class DctPerceptronConfig:
    """Shape and behavior of one spectral layer.

    `shortcut=None` applies the default rule: the inner residual add is on
    exactly when there is a single pod and the channel count is unchanged.
    """

    size: int
    c_in: int
    c_out: int | None = None
    pods: int = 1
    shortcut: bool | None = None
    nonlinearity: str = "soft_threshold"

    def __post_init__(self):
        if self.c_out is None:
            self.c_out = self.c_in
        if self.pods < 1:
            raise ValueError(f"need at least one pod, got {self.pods}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def use_shortcut(self) -> bool:
        if self.shortcut is not None:
            if self.shortcut and self.c_in != self.c_out:
                raise ValueError("inner shortcut needs matching channel counts")
            return self.shortcut
        return self.pods == 1 and self.c_in == self.c_out


def init_pods(cfg: DctPerceptronConfig, rng: np.random.Generator, dtype=np.float64) -> list[PodParams]:
    """Fresh pod parameters: unit scales, zero thresholds, fan-in-scaled mixers."""
    pods = []
    n = cfg.size
    std = np.sqrt(2.0 / cfg.c_in)
    for _ in range(cfg.pods):
        scale = Parameter(np.ones((1, 1, n, n), dtype=dtype))
        mix = Parameter((rng.standard_normal((1, 1, cfg.c_out, cfg.c_in)) * std).astype(dtype))
        threshold = bias = None
        if cfg.nonlinearity == "relu_bias":
            bias = Parameter(np.zeros((1, cfg.c_out, 1, 1), dtype=dtype))
        else:
            threshold = Parameter(np.zeros((1, 1, n, n), dtype=dtype), nonneg=True)
        pods.append(PodParams(scale, mix, threshold, bias))
    return pods


def pod_forward(xd: Tensor, pod: PodParams, nonlinearity: str = "soft_threshold") -> Tensor:
    """Run one pod on shared forward-transform coefficients."""
    z = scale_broadcast(xd, pod.scale)
    z = conv1x1(z, pod.mix, pod.bias)
    if nonlinearity == "soft_threshold":
        return soft_threshold(z, pod.threshold)
    if nonlinearity == "relu_thresholded":
        return relu_threshold(z, pod.threshold)
    if nonlinearity == "relu_bias":
        return relu(z)
    raise ValueError(f"unknown nonlinearity {nonlinearity!r}")


def layer_forward(x: Tensor, cfg: DctPerceptronConfig, pods: list[PodParams]) -> Tensor:
    """Full layer: one forward transform, pods summed in-domain, one inverse."""
    if len(pods) != cfg.pods:
        raise ValueError(f"config says {cfg.pods} pods, got {len(pods)}")
    if x.shape[1] != cfg.c_in or x.shape[2:] != (cfg.size, cfg.size):
        raise ValueError(f"input {x.shape} does not match config (C={cfg.c_in}, N={cfg.size})")
    plan = make_plan(cfg.size)
    xd = dct2d_op(x, plan, plan)
    acc = None
    for pod in pods:
        z = pod_forward(xd, pod, cfg.nonlinearity)
        acc = z if acc is None else add(acc, z)
    y = idct2d_op(acc, plan, plan)
    if cfg.use_shortcut:
        y = add(y, x)
    return y
