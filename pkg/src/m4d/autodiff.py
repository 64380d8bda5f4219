"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything downstream (blocks, model, training) runs on these primitives.
The tape is define-by-run: each primitive that touches a differentiable
input appends a backward closure, and replaying the closures in reverse
order accumulates gradients into every parameter that influenced the loss.
A tape and its tensors belong to one thread; independent passes may run on
separate threads because the active-tape stack is thread-local.
"""
from __future__ import annotations

import threading

import numpy as np

LAYER_NORM_EPS = 1e-5

_tls = threading.local()


def _tape_stack():
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.records = []
        self.closed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        # drop the recorded closures: they form reference cycles with the
        # tensors they capture, and freeing them here keeps peak memory at
        # one graph instead of several generations awaiting the gc
        self.records.clear()
        self.closed = True
        return False

    def record(self, fn):
        self.records.append(fn)

    def backward(self, loss):
        if self.closed:
            raise RuntimeError("tape already closed; call backward inside the context")
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        loss._accum_grad(np.ones_like(loss.data))
        for fn in reversed(self.records):
            fn()


class Tensor:
    """A row-major float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def _accum_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data):
    return Tensor(data, requires_grad=True)


def constant(data):
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward_fn):
    """Build the output tensor and record the adjoint if anyone needs it."""
    out = Tensor(data)
    tape = active_tape()
    needs = any(p.requires_grad for p in parents)
    if tape is not None and needs:
        out.requires_grad = True
        out._tape = tape

        def closure():
            if out.grad is not None:
                backward_fn(out.grad)

        tape.record(closure)
    return out


def backward(loss):
    """Replay the recording tape of `loss` in reverse, filling parameter grads."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("backward requires a scalar Tensor loss")
    if loss._tape is None:
        raise ValueError("loss was not produced under an active Tape")
    loss._tape.backward(loss)


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(x, w):
    """x[..., k] @ w[k, m]; weight matrices are always 2-D here."""
    x, w = _as_tensor(x), _as_tensor(w)
    data = x.data @ w.data

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g @ w.data.T)
        if w.requires_grad:
            xt = x.data.reshape(-1, x.data.shape[-1])
            gt = g.reshape(-1, g.shape[-1])
            w._accum_grad(xt.T @ gt)

    return _make(data, (x, w), bw)


def exp(x):
    x = _as_tensor(x)
    data = np.exp(x.data)

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g * data)

    return _make(data, (x,), bw)


def log(x):
    x = _as_tensor(x)
    data = np.log(x.data)

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g / x.data)

    return _make(data, (x,), bw)


def sigmoid(x):
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g * data * (1.0 - data))

    return _make(data, (x,), bw)


def silu(x):
    """Elementwise x * sigmoid(x)."""
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * s

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g * (s + x.data * s * (1.0 - s)))

    return _make(data, (x,), bw)


def softplus(x):
    x = _as_tensor(x)
    data = np.logaddexp(0.0, x.data)

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g / (1.0 + np.exp(-x.data)))

    return _make(data, (x,), bw)


def tensor_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accum_grad(np.broadcast_to(g, x.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accum_grad(np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def tensor_max(x, axis, keepdims=False):
    """Max along one axis; gradient splits evenly among tied maxima."""
    x = _as_tensor(x)
    data = x.data.max(axis=axis, keepdims=keepdims)

    def bw(g):
        if not x.requires_grad:
            return
        full = data if keepdims else np.expand_dims(data, axis)
        mask = (x.data == full).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        x._accum_grad(mask * gg)

    return _make(data, (x,), bw)


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    old = x.data.shape

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g.reshape(old))

    return _make(data, (x,), bw)


def slice_axis(x, axis, start, stop):
    x = _as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx]

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            x._accum_grad(full)

    return _make(data, (x,), bw)


def pad_axis(x, axis, before, after):
    """Zero-pad along one axis (used for causal convolution)."""
    x = _as_tensor(x)
    widths = [(0, 0)] * x.data.ndim
    widths[axis] = (before, after)
    data = np.pad(x.data, widths)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(before, before + x.data.shape[axis])
    idx = tuple(idx)

    def bw(g):
        if x.requires_grad:
            x._accum_grad(g[idx])

    return _make(data, (x,), bw)


def gather_seq(x, index):
    """Select rows along axis -2 of x[..., L, d] with index[..., M].

    `index` broadcasts against x's leading axes; M may differ from L, and
    repeated indices are fine (backward scatter-adds).
    """
    x = _as_tensor(x)
    idx = np.asarray(index.data if isinstance(index, Tensor) else index)
    idx = idx.astype(np.intp, copy=False)
    lead = np.broadcast_shapes(x.data.shape[:-2], idx.shape[:-1])
    xb = np.broadcast_to(x.data, lead + x.data.shape[-2:])
    take = np.broadcast_to(idx[..., None], lead + (idx.shape[-1], x.data.shape[-1]))
    data = np.take_along_axis(xb, take, axis=-2)

    def bw(g):
        if x.requires_grad:
            L, d = x.data.shape[-2], x.data.shape[-1]
            M = idx.shape[-1]
            full = np.zeros(lead + (L, d))
            fb = full.reshape(-1, L, d)
            gb = g.reshape(-1, M, d)
            ib = np.broadcast_to(idx, lead + (M,)).reshape(-1, M)
            np.add.at(fb, (np.arange(fb.shape[0])[:, None], ib), gb)
            x._accum_grad(_unbroadcast(full, x.data.shape))

    return _make(data, (x,), bw)


def detach(x):
    return Tensor(np.array(_as_tensor(x).data))


# ---------------------------------------------------------------------------
# composite operations


def layer_norm(x, gamma, beta):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance is clamped by eps=1e-5, so a constant slice normalizes to zero
    and the output reduces to beta instead of NaN.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError(
            f"gamma/beta must have shape ({d},), got {gamma.data.shape} and {beta.data.shape}")
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = rsqrt_eps(var)
    return add(mul(mul(xc, inv), gamma), beta)


def rsqrt_eps(v):
    """1/sqrt(v + eps) with the layer-norm epsilon."""
    v = _as_tensor(v)
    data = 1.0 / np.sqrt(v.data + LAYER_NORM_EPS)

    def bw(g):
        if v.requires_grad:
            v._accum_grad(g * (-0.5) * data ** 3)

    return _make(data, (v,), bw)


def depthwise_conv1d(x, kernels):
    """Causal per-channel convolution along axis -2 of x[..., L, d].

    kernels[w, d]: tap j multiplies x shifted by (w-1-j), so the last tap
    sits on the current position and output t depends only on x[t-w+1 .. t].
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    w = kernels.data.shape[0]
    if w < 1:
        raise ValueError("kernel width must be >= 1")
    if kernels.data.shape[1] != x.data.shape[-1]:
        raise ValueError("kernel channel count must match input channels")
    L = x.data.shape[-2]
    xp = pad_axis(x, -2, w - 1, 0)
    out = None
    for j in range(w):
        term = mul(slice_axis(xp, -2, j, j + L), slice_axis(kernels, 0, j, j + 1))
        out = term if out is None else add(out, term)
    return out
