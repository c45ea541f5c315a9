"""Differentiable primitives on NCHW tensors.

Each function computes its value eagerly and records a closure mapping the
output gradient to one gradient per parent.
"""

import contextlib

import numpy as np

from .. import kernels, linops
from .tensor import Tensor, as_tensor

_record = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording backward closures."""
    prev = _record[0]
    _record[0] = False
    try:
        yield
    finally:
        _record[0] = prev


def _node(value, parents, backward_fn, op):
    needs = _record[0] and any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic
def scale(x, c):
    """x * c for a Python scalar c (keeps the tensor's dtype)."""
    c = float(c)

    def back(g):
        return (g * c,)

    return _node(x.data * c, (x,), back, "scale")


def shift(x, c):
    c = float(c)

    def back(g):
        return (g,)

    return _node(x.data + c, (x,), back, "shift")


def _is_scalar(v):
    return isinstance(v, (int, float, np.floating, np.integer))


def add(a, b):
    if _is_scalar(b):
        return shift(a, b)
    if _is_scalar(a):
        return shift(b, a)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    if _is_scalar(b):
        return shift(a, -b)
    if _is_scalar(a):
        return shift(scale(b, -1.0), a)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back, "mul")


def div(a, b):
    if _is_scalar(b):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), back, "div")


def square(x):
    def back(g):
        return (2.0 * g * x.data,)

    return _node(x.data * x.data, (x,), back, "square")


def sum(x):  # noqa: A001 - mirrors numpy naming
    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), back, "sum")


def mean(x):
    factor = 1.0 / x.data.size

    def back(g):
        return (np.full(x.shape, g * factor, dtype=x.dtype),)

    return _node(np.asarray(x.data.mean(), dtype=x.dtype), (x,), back, "mean")


def mse(a, b):
    """mean((a - b)^2) as one node."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    factor = 2.0 / diff.size

    def back(g):
        ga = (g * factor) * diff
        return ga, -ga

    return _node(np.asarray((diff * diff).mean(), dtype=diff.dtype), (a, b), back, "mse")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        index = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return tuple(out)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 back, "concat")


# --------------------------------------------------------------- activations
def relu(x):
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _node(x.data * mask, (x,), back, "relu")


def lrelu(x, alpha=0.2):
    mask = x.data > 0

    def back(g):
        return (np.where(mask, g, g * alpha),)

    return _node(np.where(mask, x.data, x.data * alpha), (x,), back, "lrelu")


# ------------------------------------------------------------------- padding
def pad2d(x, margins, mode="reflect"):
    """Pad the spatial axes by ``margins`` = (top, bottom, left, right).

    ``reflect`` mirrors without repeating the edge sample, folding again when
    a margin exceeds the image; ``zero`` fills with zeros.
    """
    top, bottom, left, right = margins
    h, w = x.shape[-2:]
    if mode == "zero":
        pad = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]

        def back(g):
            return (g[..., top:top + h, left:left + w],)

        return _node(np.pad(x.data, pad), (x,), back, "pad_zero")
    if mode != "reflect":
        raise ValueError(f"unknown padding mode {mode!r}")
    rows = linops.reflect_index(h, top, bottom)
    cols = linops.reflect_index(w, left, right)
    out = x.data[..., rows, :][..., cols]

    def back(g):
        sel_h = np.zeros((len(rows), h), dtype=g.dtype)
        sel_h[np.arange(len(rows)), rows] = 1
        sel_w = np.zeros((len(cols), w), dtype=g.dtype)
        sel_w[np.arange(len(cols)), cols] = 1
        return (np.matmul(np.matmul(sel_h.T, g), sel_w),)

    return _node(out, (x,), back, "pad_reflect")


# ---------------------------------------------------------------- convolution
def _conv_out(size, k, stride, dilation):
    return (size - dilation * (k - 1) - 1) // stride + 1


def _pad_index(n, before, after, mode):
    """Source index of every padded coordinate; -1 marks a zero sample."""
    if mode == "reflect":
        return linops.reflect_index(n, before, after)
    if mode == "zero":
        return np.concatenate([np.full(before, -1), np.arange(n), np.full(after, -1)])
    raise ValueError(f"unknown padding mode {mode!r}")


def conv2d(x, w, b=None, stride=1, dilation=1, padding="reflect"):
    """Cross-correlation of NCHW ``x`` with OIHW ``w``.

    ``padding`` is ``reflect`` or ``zero`` (same-size margins of
    ``dilation * (k - 1) // 2``) or ``valid``. Padding is folded into the
    patch gather, so its adjoint comes for free in the scatter.
    """
    x = as_tensor(x)
    n_out, n_in, kh, kw = w.shape
    if x.shape[1] != n_in:
        raise ValueError(f"conv2d expects {n_in} input channels, got {x.shape[1]}")
    n_img, _, h, wd = x.shape
    if padding == "valid":
        rows, cols = np.arange(h), np.arange(wd)
    else:
        ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
        rows = _pad_index(h, ph, ph, padding)
        cols = _pad_index(wd, pw, pw, padding)
    oh = _conv_out(len(rows), kh, stride, dilation)
    ow = _conv_out(len(cols), kw, stride, dilation)
    if oh < 1 or ow < 1:
        raise ValueError(f"input {h}x{wd} too small for kernel/dilation")
    patches = kernels.im2col(x.data, rows, cols, kh, kw, stride, dilation, oh, ow)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(n_out, -1)
    out = patches @ wmat.T
    if b is not None:
        out += b.data
    # channels-last memory under an NCHW view; consumers accept any strides
    out = out.reshape(n_img, oh, ow, n_out).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, n_out)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (g2.T @ patches).reshape(n_out, kh, kw, n_in).transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gx = kernels.col2im(g2 @ wmat, rows, cols, n_img, n_in, h, wd, kh, kw, stride,
                                dilation, oh, ow)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back, "conv2d")


def deconv2d(x, w, b=None, up=2):
    """Transposed convolution doubling H and W.

    ``w`` has shape (C_in, C_out, k, k). Without bias this is the exact
    adjoint of ``conv2d(., w, stride=2, padding="zero")``.
    """
    if up != 2:
        raise ValueError("deconv2d supports up=2 only")
    x = as_tensor(x)
    n_in, n_out, kh, kw = w.shape
    if x.shape[1] != n_in:
        raise ValueError(f"deconv2d expects {n_in} input channels, got {x.shape[1]}")
    n_img, _, h, wd = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    rows = _pad_index(up * h, ph, ph, "zero")
    cols = _pad_index(up * wd, pw, pw, "zero")
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, n_in)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(n_in, -1)
    out = kernels.col2im(x2 @ wmat, rows, cols, n_img, n_out, up * h, up * wd, kh, kw, up, 1,
                         h, wd)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def back(g):
        gcols = kernels.im2col(g, rows, cols, kh, kw, up, 1, h, wd)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(n_img, h, wd, n_in).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = (x2.T @ gcols).reshape(n_in, kh, kw, n_out).transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back, "deconv2d")


# --------------------------------------------------------- fixed linear maps
def separable(x, mat_h, mat_w, op="separable"):
    """Apply fixed per-axis matrices: ``mat_h @ x @ mat_w.T`` on the spatial axes."""
    x = as_tensor(x)
    mh = mat_h.astype(x.dtype, copy=False)
    mw = mat_w.astype(x.dtype, copy=False)

    def back(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return _node(linops.apply_separable(x.data, mh, mw), (x,), back, op)


def pyr_down(x):
    """Binomial blur then keep every second sample (j x j -> j/2 x j/2)."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"pyr_down needs even dimensions, got {h}x{w}")
    return separable(x, linops.pyr_down_matrix(h), linops.pyr_down_matrix(w), "pyr_down")


def pyr_up(x):
    """Zero-insert then binomial smoothing with gain 2 per axis (j x j -> 2j x 2j)."""
    h, w = x.shape[-2:]
    return separable(x, linops.pyr_up_matrix(h), linops.pyr_up_matrix(w), "pyr_up")


def bilinear_up(x, factor):
    h, w = x.shape[-2:]
    return separable(x, linops.bilinear_up_matrix(h, factor),
                     linops.bilinear_up_matrix(w, factor), "bilinear_up")


def _box_sum(x, radius):
    """Valid (2r+1)^2 window sums; adjoint is the zero-padded full window sum."""

    def back(g):
        gp = np.pad(g, [(0, 0)] * (g.ndim - 2) + [(2 * radius, 2 * radius)] * 2)
        return (kernels.box_sum(gp, radius),)

    return _node(kernels.box_sum(x.data, radius), (x,), back, "box_sum")


def box_mean(x, radius):
    """Mean over the (2r+1)^2 window around each pixel, reflect-101 borders."""
    x = as_tensor(x)
    k = 2 * radius + 1
    padded = pad2d(x, (radius,) * 4, "reflect")
    return scale(_box_sum(padded, radius), 1.0 / (k * k))
