# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch gather/scatter for convolution and windowed box sums.

Padding is folded into the gather: ``rows``/``cols`` map each padded
coordinate to a source index, or -1 for a zero sample.
"""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, :] x, const long[::1] rows, const long[::1] cols, int kh, int kw,
           int stride, int dilation, int out_h, int out_w):
    """(N*out_h*out_w, kh*kw*C) patches of NCHW ``x`` (any strides), columns ordered (i, j, c)."""
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t r, col, n, c, i, j, oy, ox, sy, sx
    cdef Py_ssize_t ncol = chans * kh * kw
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n_img * out_h * out_w, ncol), dtype=dtype)
    cdef real[:, ::1] res = out
    with nogil:
        r = 0
        for n in range(n_img):
            for oy in range(out_h):
                for ox in range(out_w):
                    col = 0
                    for i in range(kh):
                        sy = rows[oy * stride + i * dilation]
                        for j in range(kw):
                            sx = cols[ox * stride + j * dilation]
                            if sy < 0 or sx < 0:
                                for c in range(chans):
                                    res[r, col + c] = 0
                            else:
                                for c in range(chans):
                                    res[r, col + c] = x[n, c, sy, sx]
                            col += chans
                    r += 1
    return out


def col2im(const real[:, ::1] patches, const long[::1] rows, const long[::1] cols, int n_img,
           int chans, int height, int width, int kh, int kw, int stride, int dilation,
           int out_h, int out_w):
    """Adjoint of ``im2col``: scatter-add patch values onto an (N, C, H, W) grid.

    The result is an NCHW view of channels-last memory.
    """
    cdef Py_ssize_t r, col, n, c, i, j, oy, ox, sy, sx
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_img, height, width, chans), dtype=dtype)
    cdef real[:, :, :, ::1] res = out
    with nogil:
        r = 0
        for n in range(n_img):
            for oy in range(out_h):
                for ox in range(out_w):
                    col = 0
                    for i in range(kh):
                        sy = rows[oy * stride + i * dilation]
                        for j in range(kw):
                            sx = cols[ox * stride + j * dilation]
                            if sy >= 0 and sx >= 0:
                                for c in range(chans):
                                    res[n, sy, sx, c] += patches[r, col + c]
                            col += chans
                    r += 1
    return out.transpose(0, 3, 1, 2)


def box_sum(const real[:, :, ::1] x, int radius):
    """Valid (2r+1)^2 window sums of each plane of a (P, H, W) stack via a summed-area table."""
    cdef Py_ssize_t planes = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t k = 2 * radius + 1
    cdef Py_ssize_t oh = h - k + 1, ow = w - k + 1
    cdef Py_ssize_t p, y, xx
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((planes, oh, ow), dtype=dtype)
    cdef real[:, :, ::1] res = out
    cdef double[:, ::1] sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    with nogil:
        for p in range(planes):
            for y in range(h):
                acc = 0.0
                for xx in range(w):
                    acc += x[p, y, xx]
                    sat[y + 1, xx + 1] = sat[y, xx + 1] + acc
            for y in range(oh):
                for xx in range(ow):
                    res[p, y, xx] = <real>(sat[y + k, xx + k] - sat[y, xx + k]
                                           - sat[y + k, xx] + sat[y, xx])
    return out
