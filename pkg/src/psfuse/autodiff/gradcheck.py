"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, inputs, index, eps=1e-5):
    """d fn / d inputs[index] by central differences, evaluated in float64."""
    base = [np.array(t, dtype=np.float64) for t in inputs]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn(*[Tensor(a) for a in base]).data)
        flat[i] = orig - eps
        lo = float(fn(*[Tensor(a) for a in base]).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def analytic_grads(fn, inputs, dtype=np.float64):
    leaves = [Tensor(np.array(a, dtype=dtype), requires_grad=True) for a in inputs]
    out = fn(*leaves)
    out.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(analytic, numeric):
    """max |a - n| / max |n| (absolute when the numeric gradient vanishes)."""
    diff = np.max(np.abs(np.asarray(analytic, dtype=np.float64) - numeric))
    scale = np.max(np.abs(numeric))
    return float(diff / scale) if scale > 0 else float(diff)


def check(fn, inputs, eps=1e-5, dtype=np.float64):
    """Worst relative error over all inputs of scalar-valued ``fn``.

    The analytic side runs in ``dtype``; the finite-difference reference
    always runs in float64.
    """
    grads = analytic_grads(fn, inputs, dtype)
    worst = 0.0
    for i in range(len(inputs)):
        num = numeric_grad(fn, inputs, i, eps)
        worst = max(worst, relative_error(grads[i], num))
    return worst
