"""Reverse-mode automatic differentiation over rank-4 numpy arrays.

Every value is a Tensor wrapping a (B, C, H, W) float array.  Vectors and
matrices ride along with size-1 axes, e.g. a channel-mixing matrix is
(1, 1, C_out, C_in) and a bias is (1, C, 1, 1).

Differentiable ops run eagerly and, while gradients are enabled, hang a
creation-ordered node off their output.  The set of nodes reachable from a
loss is the tape for that loss: `backward` replays it in reverse creation
order, visiting each op exactly once, and accumulates gradients into the
`.grad` of every leaf that requires them.  Tensors built under `no_grad`
carry no nodes and are plain immutable values.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "grad_enabled",
    "apply_op",
    "backward",
    "add",
    "sub",
    "mul",
    "scale_broadcast",
    "relu",
    "conv1x1",
    "conv2d",
    "batch_norm",
    "max_pool2",
    "global_avg_pool",
    "linear",
    "softmax_cross_entropy",
    "tensor_sum",
]

_COUNTER = itertools.count()
_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class no_grad:
    """Context manager that suspends tape recording (for eval paths)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _STATE.enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.enabled = self._prev
        return False


class _Node:
    """One executed op: inputs, the output it produced, and its adjoint."""

    __slots__ = ("seq", "inputs", "out", "backward_fn")

    def __init__(self, inputs, out, backward_fn):
        self.seq = next(_COUNTER)
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


class Tensor:
    """A rank-4 float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 4:
            raise ValueError(f"tensors are rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"


class Parameter(Tensor):
    """A trainable tensor; `nonneg` marks it for projection onto [0, inf)."""

    __slots__ = ("nonneg",)

    def __init__(self, data, nonneg=False):
        super().__init__(data, requires_grad=True)
        self.nonneg = bool(nonneg)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def apply_op(out_data, inputs, backward_fn) -> Tensor:
    """Wrap an op result, recording a tape node when gradients are live.

    `backward_fn(g)` must return one gradient array (or None) per input,
    in order.  Ops defined in other modules use this same hook.
    """
    out = Tensor(out_data)
    if grad_enabled() and any(_tracked(t) for t in inputs):
        out.node = _Node(tuple(inputs), out, backward_fn)
    return out


def backward(loss: Tensor, release: bool = True):
    """Propagate d(loss)/d(leaf) into `.grad` of every tracked leaf.

    The loss must be a (1, 1, 1, 1) scalar recorded on the tape.  Gradients
    accumulate into `.grad` across separate forward passes.  After the walk
    the tape is dismantled (pass release=False to keep it) so the graph's
    intermediate arrays free immediately instead of waiting on the cycle
    collector.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
            return
        raise ValueError("loss was not recorded on the tape; " "was it built under no_grad?")

    nodes = []
    seen = set()
    stack = [loss.node]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for t in node.inputs:
            if t.node is not None and id(t.node) not in seen:
                stack.append(t.node)
    nodes.sort(key=lambda n: n.seq, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g_out = grads.pop(id(node.out), None)
        if g_out is None:
            continue
        # Keep leaf gradients also after the walk.
        if node.out.requires_grad:
            node.out.grad = g_out if node.out.grad is None else node.out.grad + g_out
        for t, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    for node in nodes:
        for t in node.inputs:
            if t.requires_grad and t.node is None and id(t) in grads:
                g = grads.pop(id(t))
                t.grad = g if t.grad is None else t.grad + g
    if release:
        for node in nodes:
            node.out.node = None
            node.inputs = ()
            node.backward_fn = None


# ---------------------------------------------------------------------------
# elementwise


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op} needs matching shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale_broadcast(x: Tensor, v: Tensor) -> Tensor:
    """Multiply a (B, C, H, W) tensor by a (1, 1, H, W) map, broadcast over B and C."""
    if v.shape != (1, 1) + x.shape[2:]:
        raise ValueError(f"scale map must be (1, 1, {x.shape[2]}, {x.shape[3]}), got {v.shape}")
    xd, vd = x.data, v.data

    def bwd(g):
        return g * vd, (g * xd).sum(axis=(0, 1), keepdims=True)

    return apply_op(xd * vd, (x, v), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a (1, 1, 1, 1) scalar."""
    out = x.data.sum(dtype=x.dtype).reshape(1, 1, 1, 1)
    return apply_op(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy() * 1.0,))


# ---------------------------------------------------------------------------
# convolutions


def conv1x1(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise channel mixing: w is (1, 1, C_out, C_in), bias (1, C_out, 1, 1)."""
    if w.shape[0] != 1 or w.shape[1] != 1 or w.shape[3] != x.shape[1]:
        raise ValueError(f"mixer shape {w.shape} does not fit input {x.shape}")
    wm = w.data[0, 0]
    out = np.einsum("oc,bchw->bohw", wm, x.data, optimize=True)
    inputs = (x, w)
    if bias is not None:
        if bias.shape != (1, wm.shape[0], 1, 1):
            raise ValueError(f"bias shape {bias.shape} does not fit {wm.shape[0]} channels")
        out += bias.data
        inputs = (x, w, bias)
    xd = x.data

    def bwd(g):
        gx = np.einsum("oc,bohw->bchw", wm, g, optimize=True)
        gw = np.einsum("bohw,bchw->oc", g, xd, optimize=True)[None, None]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3), keepdims=True)

    return apply_op(out, inputs, bwd)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """2D cross-correlation with SAME zero padding.

    w is (C_out, C_in, K, K) with K odd; stride 1 or 2.  Output spatial size
    is ceil(N / stride).  No bias: the models always normalize right after.
    """
    co, ci, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {w.shape}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if ci != x.shape[1]:
        raise ValueError(f"kernel expects {ci} input channels, input has {x.shape[1]}")
    b, _, h, wdim = x.shape
    pad = kh // 2
    ho = -(-h // stride)
    wo = -(-wdim // stride)

    wd = w.data
    # Work channels-last inside: patch rows then come out of memory in long
    # contiguous runs, and each direction is one matrix product.
    xcl = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    xp = np.pad(xcl, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * ci)
    w2 = wd.transpose(2, 3, 1, 0).reshape(kh * kw * ci, co)
    out = (cols @ w2).reshape(b, ho, wo, co).transpose(0, 3, 1, 2).copy()
    x_tracked = x.requires_grad or x.node is not None
    pshape = xp.shape

    def bwd(g):
        gcl = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        g2 = gcl.reshape(b * ho * wo, co)
        gw = (cols.T @ g2).reshape(kh, kw, ci, co).transpose(3, 2, 0, 1).copy()
        if not x_tracked:
            return None, gw
        if stride == 1:
            # Input gradient is a full correlation with the transposed,
            # spatially flipped kernel; run it as a second patch product.
            wt = np.ascontiguousarray(wd.transpose(2, 3, 0, 1)[::-1, ::-1]).reshape(kh * kw * co, ci)
            q = kh - 1 - pad
            gp = np.pad(gcl, ((0, 0), (q, q), (q, q), (0, 0)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(1, 2))
            gcols = gwin.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * wdim, kh * kw * co)
            return (gcols @ wt).reshape(b, h, wdim, ci).transpose(0, 3, 1, 2).copy(), gw
        gcols = (g2 @ w2.T).reshape(b, ho, wo, kh, kw, ci)
        gxp = np.zeros(pshape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, i, j]
        gx = gxp[:, pad : pad + h, pad : pad + wdim].transpose(0, 3, 1, 2).copy()
        return gx, gw

    return apply_op(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# normalization and heads


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running buffers in place; eval mode uses the buffers.  gamma and beta
    are (1, C, 1, 1).
    """
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ValueError("gamma/beta must be (1, C, 1, 1)")
    axes = (0, 2, 3)
    gd, bd = gamma.data, beta.data
    if training:
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c)
    else:
        mean = running_mean.reshape(1, c, 1, 1)
        var = running_var.reshape(1, c, 1, 1)
    std = np.sqrt(var + eps)
    xhat = (x.data - mean) / std
    out = gd * xhat + bd
    m = x.shape[0] * x.shape[2] * x.shape[3]

    def bwd(g):
        gbeta = g.sum(axis=axes, keepdims=True)
        ggamma = (g * xhat).sum(axis=axes, keepdims=True)
        if training:
            gx = (gd / std) * (g - gbeta / m - xhat * (ggamma / m))
        else:
            gx = g * gd / std
        return gx, ggamma, gbeta

    return apply_op(out, (x, gamma, beta), bwd)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route the gradient to the first max."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return apply_op(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes, keeping (B, C, 1, 1)."""
    out = x.data.mean(axis=(2, 3), keepdims=True)
    hw = x.shape[2] * x.shape[3]

    def bwd(g):
        return (np.broadcast_to(g / hw, x.shape).copy(),)

    return apply_op(out, (x,), bwd)


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine head on pooled features: x (B, C, 1, 1), w (1, 1, K, C) -> (B, K, 1, 1)."""
    if x.shape[2:] != (1, 1):
        raise ValueError(f"linear expects pooled (B, C, 1, 1) input, got {x.shape}")
    if w.shape[0] != 1 or w.shape[1] != 1 or w.shape[3] != x.shape[1]:
        raise ValueError(f"weight shape {w.shape} does not fit input {x.shape}")
    wm = w.data[0, 0]
    feats = x.data[:, :, 0, 0]
    out = feats @ wm.T
    inputs = (x, w)
    if bias is not None:
        if bias.shape != (1, wm.shape[0], 1, 1):
            raise ValueError(f"bias shape {bias.shape} does not fit {wm.shape[0]} classes")
        out = out + bias.data[0, :, 0, 0]
        inputs = (x, w, bias)

    def bwd(g):
        g2 = g[:, :, 0, 0]
        gx = (g2 @ wm)[:, :, None, None]
        gw = (g2.T @ feats)[None, None]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)[None, :, None, None]

    return apply_op(out[:, :, None, None], inputs, bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    logits are (B, K, 1, 1); labels an int array of shape (B,).  The max is
    subtracted before exponentiation so large logits stay finite.
    """
    labels = np.asarray(labels)
    b = logits.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"labels must have shape ({b},), got {labels.shape}")
    z = logits.data[:, :, 0, 0]
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(b), labels] - np.log(ez.sum(axis=1)))
    loss = np.array(nll.mean(), dtype=logits.dtype).reshape(1, 1, 1, 1)

    def bwd(g):
        scale = g.reshape(()) / b
        gz = probs.copy()
        gz[np.arange(b), labels] -= 1.0
        return ((gz * scale)[:, :, None, None],)

    return apply_op(loss, (logits,), bwd)
