"""Parameterized network pieces built on the tensor ops.

A tiny explicit-registration module system: each Module registers child
modules, parameters, and buffers under names at construction time, so the
flattened registries have a stable, insertion-defined order.  Buffers are
plain numpy arrays mutated in place (batch-norm running statistics).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .filtering import dct_downsample_op
from .perceptron import DctPerceptronConfig, init_pods, layer_forward
from .tensor import Parameter, Tensor

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    "DctPerceptron",
    "BasicBlock",
    "BottleneckBlock",
    "DctAllBlock",
    "Projection",
]


class Module:
    def __init__(self):
        self._modules: dict[str, Module] = {}
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def register_module(self, name: str, module: "Module | None"):
        if module is not None:
            self._modules[name] = module
        setattr(self, name, module)
        return module

    def register_param(self, name: str, param: Parameter):
        self._params[name] = param
        setattr(self, name, param)
        return param

    def register_buffer(self, name: str, arr: np.ndarray):
        self._buffers[name] = arr
        setattr(self, name, arr)
        return arr

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    """Square odd-sized convolution, SAME zero padding, no bias."""

    def __init__(self, c_in, c_out, ksize, stride, rng, dtype=np.float64):
        super().__init__()
        self.c_in, self.c_out, self.ksize, self.stride = c_in, c_out, ksize, stride
        fan_in = c_in * ksize * ksize
        self.register_param("weight", Parameter(_he_normal(rng, (c_out, c_in, ksize, ksize), fan_in, dtype)))

    def forward(self, x, training):
        return T.conv2d(x, self.weight, stride=self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.register_param("gamma", Parameter(np.ones((1, channels, 1, 1), dtype=dtype)))
        self.register_param("beta", Parameter(np.zeros((1, channels, 1, 1), dtype=dtype)))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, training):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


class Linear(Module):
    """Classifier head on pooled features, with bias."""

    def __init__(self, c_in, classes, rng, dtype=np.float64):
        super().__init__()
        self.c_in, self.classes = c_in, classes
        w = (rng.standard_normal((1, 1, classes, c_in)) / np.sqrt(c_in)).astype(dtype)
        self.register_param("weight", Parameter(w))
        self.register_param("bias", Parameter(np.zeros((1, classes, 1, 1), dtype=dtype)))

    def forward(self, x, training):
        return T.linear(x, self.weight, self.bias)


class DctPerceptron(Module):
    """Module wrapper around the spectral layer's pods."""

    def __init__(self, cfg: DctPerceptronConfig, rng, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        self.pods = init_pods(cfg, rng, dtype)
        for i, pod in enumerate(self.pods):
            for name, p in pod.named():
                self.register_param(f"pod{i}.{name}", p)

    def forward(self, x, training):
        return layer_forward(x, self.cfg, self.pods)


class Projection(Module):
    """Option-B shortcut: 1x1 strided conv plus normalization."""

    def __init__(self, c_in, c_out, stride, rng, dtype=np.float64):
        super().__init__()
        self.register_module("conv", Conv2d(c_in, c_out, 1, stride, rng, dtype))
        self.register_module("bn", BatchNorm2d(c_out, dtype))

    def forward(self, x, training):
        return self.bn(self.conv(x, training), training)


class BasicBlock(Module):
    """Two 3x3 units with a residual add; the second unit may be spectral.

    `dctp` carries (pods, shortcut, nonlinearity) when the second unit is a
    DCT perceptron, else the unit stays a 3x3 convolution.
    """

    def __init__(self, c_in, c_out, n_out, stride, rng, dctp=None, dtype=np.float64):
        super().__init__()
        self.register_module("conv1", Conv2d(c_in, c_out, 3, stride, rng, dtype))
        self.register_module("bn1", BatchNorm2d(c_out, dtype))
        if dctp is None:
            self.register_module("unit2", Conv2d(c_out, c_out, 3, 1, rng, dtype))
        else:
            pods, shortcut, nonlin = dctp
            cfg = DctPerceptronConfig(n_out, c_out, pods=pods, shortcut=shortcut, nonlinearity=nonlin)
            self.register_module("unit2", DctPerceptron(cfg, rng, dtype))
        self.register_module("bn2", BatchNorm2d(c_out, dtype))
        needs_proj = stride != 1 or c_in != c_out
        self.register_module("proj", Projection(c_in, c_out, stride, rng, dtype) if needs_proj else None)

    def forward(self, x, training):
        h = T.relu(self.bn1(self.conv1(x, training), training))
        h = self.bn2(self.unit2(h, training), training)
        shortcut = self.proj(x, training) if self.proj is not None else x
        return T.relu(T.add(h, shortcut))


class BottleneckBlock(Module):
    """1x1 reduce, 3x3 (or spectral unit), 1x1 expand, residual add."""

    expansion = 4

    def __init__(self, c_in, c_mid, n_out, stride, rng, dctp=None, dtype=np.float64):
        super().__init__()
        c_out = c_mid * self.expansion
        self.register_module("conv1", Conv2d(c_in, c_mid, 1, 1, rng, dtype))
        self.register_module("bn1", BatchNorm2d(c_mid, dtype))
        if dctp is None:
            self.register_module("unit2", Conv2d(c_mid, c_mid, 3, stride, rng, dtype))
        else:
            if stride != 1:
                raise ValueError("spectral units do not downsample in bottleneck blocks")
            pods, shortcut, nonlin = dctp
            cfg = DctPerceptronConfig(n_out, c_mid, pods=pods, shortcut=shortcut, nonlinearity=nonlin)
            self.register_module("unit2", DctPerceptron(cfg, rng, dtype))
        self.register_module("bn2", BatchNorm2d(c_mid, dtype))
        self.register_module("conv3", Conv2d(c_mid, c_out, 1, 1, rng, dtype))
        self.register_module("bn3", BatchNorm2d(c_out, dtype))
        needs_proj = stride != 1 or c_in != c_out
        self.register_module("proj", Projection(c_in, c_out, stride, rng, dtype) if needs_proj else None)
        self.c_out = c_out

    def forward(self, x, training):
        h = T.relu(self.bn1(self.conv1(x, training), training))
        h = T.relu(self.bn2(self.unit2(h, training), training))
        h = self.bn3(self.conv3(h, training), training)
        shortcut = self.proj(x, training) if self.proj is not None else x
        return T.relu(T.add(h, shortcut))


class DctAllBlock(Module):
    """Basic block with both units spectral; stride 2 becomes a coefficient crop.

    Downsampling positions first halve the resolution with `dct_downsample`,
    then the first unit mixes C_in into C_out at the reduced size.  The
    projection shortcut stays a strided 1x1 convolution.
    """

    def __init__(self, c_in, c_out, n_out, stride, rng, nonlin="soft_threshold", dtype=np.float64):
        super().__init__()
        self.stride = stride
        cfg1 = DctPerceptronConfig(n_out, c_in, c_out, nonlinearity=nonlin)
        self.register_module("unit1", DctPerceptron(cfg1, rng, dtype))
        self.register_module("bn1", BatchNorm2d(c_out, dtype))
        cfg2 = DctPerceptronConfig(n_out, c_out, nonlinearity=nonlin)
        self.register_module("unit2", DctPerceptron(cfg2, rng, dtype))
        self.register_module("bn2", BatchNorm2d(c_out, dtype))
        needs_proj = stride != 1 or c_in != c_out
        self.register_module("proj", Projection(c_in, c_out, stride, rng, dtype) if needs_proj else None)

    def forward(self, x, training):
        h = dct_downsample_op(x) if self.stride == 2 else x
        h = T.relu(self.bn1(self.unit1(h, training), training))
        h = self.bn2(self.unit2(h, training), training)
        shortcut = self.proj(x, training) if self.proj is not None else x
        return T.relu(T.add(h, shortcut))
