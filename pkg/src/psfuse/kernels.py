"""Hot-loop dispatch: the compiled extension when importable, numpy otherwise."""

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def set_backend(name):
    """Switch between ``"compiled"`` and ``"python"`` kernels at runtime."""
    global _impl, BACKEND
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _impl = _compiled
    elif name == "python":
        _impl = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def _index(arr):
    return np.ascontiguousarray(arr, dtype=np.int64)


def im2col(x, rows, cols, kh, kw, stride, dilation, out_h, out_w):
    """Patch matrix of NCHW ``x`` read through padded-coordinate index tables."""
    return _impl.im2col(x, _index(rows), _index(cols), kh, kw, stride, dilation, out_h, out_w)


def col2im(patches, rows, cols, n_img, chans, height, width, kh, kw, stride, dilation,
           out_h, out_w):
    return _impl.col2im(np.ascontiguousarray(patches), _index(rows), _index(cols), n_img,
                        chans, height, width, kh, kw, stride, dilation, out_h, out_w)


def box_sum(x, radius):
    """Valid window sums over the last two axes of ``x`` (any leading shape)."""
    lead = x.shape[:-2]
    flat = np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:]))
    out = _impl.box_sum(flat, radius)
    return out.reshape(lead + out.shape[-2:])
