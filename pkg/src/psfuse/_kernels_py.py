"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension has not been built.
"""

import numpy as np


def _gather_padded(x, rows, cols):
    xp = x[:, :, np.maximum(rows, 0)][:, :, :, np.maximum(cols, 0)]
    if (rows < 0).any() or (cols < 0).any():
        mask = (rows >= 0)[:, None] & (cols >= 0)[None, :]
        xp = xp * mask
    return xp


def im2col(x, rows, cols, kh, kw, stride, dilation, out_h, out_w):
    xp = _gather_padded(x, rows, cols)
    n_img, chans = xp.shape[:2]
    out = np.empty((n_img, out_h, out_w, kh, kw, chans), dtype=x.dtype)
    span_y = stride * (out_h - 1) + 1
    span_x = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            y0, x0 = i * dilation, j * dilation
            patch = xp[:, :, y0:y0 + span_y:stride, x0:x0 + span_x:stride]
            out[:, :, :, i, j, :] = patch.transpose(0, 2, 3, 1)
    return out.reshape(n_img * out_h * out_w, kh * kw * chans)


def col2im(patches, rows, cols, n_img, chans, height, width, kh, kw, stride, dilation,
           out_h, out_w):
    xp = np.zeros((n_img, chans, len(rows), len(cols)), dtype=patches.dtype)
    grid = patches.reshape(n_img, out_h, out_w, kh, kw, chans)
    span_y = stride * (out_h - 1) + 1
    span_x = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            y0, x0 = i * dilation, j * dilation
            xp[:, :, y0:y0 + span_y:stride, x0:x0 + span_x:stride] += (
                grid[:, :, :, i, j, :].transpose(0, 3, 1, 2))
    sel_h = np.zeros((len(rows), height), dtype=patches.dtype)
    keep = rows >= 0
    sel_h[np.flatnonzero(keep), rows[keep]] = 1
    sel_w = np.zeros((len(cols), width), dtype=patches.dtype)
    keep = cols >= 0
    sel_w[np.flatnonzero(keep), cols[keep]] = 1
    return np.matmul(np.matmul(sel_h.T, xp), sel_w)


def box_sum(x, radius):
    k = 2 * radius + 1
    sat = np.zeros((x.shape[0], x.shape[1] + 1, x.shape[2] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=1, dtype=np.float64), axis=2, out=sat[:, 1:, 1:])
    out = sat[:, k:, k:] - sat[:, :-k, k:] - sat[:, k:, :-k] + sat[:, :-k, :-k]
    return out.astype(x.dtype, copy=False)
