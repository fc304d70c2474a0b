# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 kernels.

Convolution runs as C im2col/col2im around BLAS sgemm (the same BLAS numpy
links against), which beats the pure-numpy route mainly on the backward
pass: the input gradient costs one gemm plus a scatter instead of a
zero-dilated full convolution. Bilinear resampling and pooling are plain
loops. Results are bit-deterministic for any thread count: parallel loops
only ever write disjoint output slices.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport sgemm

cnp.import_array()

cdef int _num_threads = 1


def set_num_threads(int n):
    global _num_threads
    _num_threads = n if n > 0 else 1


def get_num_threads():
    return _num_threads


cdef void _gemm_rowmajor(float* a, float* b, float* c,
                         int m, int n, int k, float beta) nogil:
    # row-major C[m,n] = A[m,k] @ B[k,n] via Fortran sgemm on transposes
    cdef char nt = b'N'
    cdef float alpha = 1.0
    sgemm(&nt, &nt, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _im2col(const float* x, float* cols, int ci, int h, int w,
                  int kh, int kw, int stride, int padding,
                  int oh, int ow, int nthreads) nogil:
    cdef int ck = ci * kh * kw
    cdef int r, c, dy, dx, oy, ox, iy, ix
    cdef const float* xrow
    cdef float* crow
    for r in prange(ck, num_threads=nthreads, schedule='static'):
        c = r // (kh * kw)
        dy = (r // kw) % kh
        dx = r % kw
        for oy in range(oh):
            iy = oy * stride + dy - padding
            crow = cols + (<long>r) * oh * ow + (<long>oy) * ow
            if iy < 0 or iy >= h:
                for ox in range(ow):
                    crow[ox] = 0
                continue
            xrow = x + ((<long>c) * h + iy) * w
            for ox in range(ow):
                ix = ox * stride + dx - padding
                if 0 <= ix < w:
                    crow[ox] = xrow[ix]
                else:
                    crow[ox] = 0


cdef void _col2im(const float* cols, float* x, int ci, int h, int w,
                  int kh, int kw, int stride, int padding,
                  int oh, int ow, int nthreads) nogil:
    # adjoint of _im2col; parallel over input channels keeps writes disjoint
    cdef int r, c, dy, dx, oy, ox, iy, ix
    cdef const float* crow
    cdef float* xrow
    for c in prange(ci, num_threads=nthreads, schedule='static'):
        for dy in range(kh):
            for dx in range(kw):
                r = (c * kh + dy) * kw + dx
                for oy in range(oh):
                    iy = oy * stride + dy - padding
                    if iy < 0 or iy >= h:
                        continue
                    crow = cols + (<long>r) * oh * ow + (<long>oy) * ow
                    xrow = x + ((<long>c) * h + iy) * w
                    for ox in range(ow):
                        ix = ox * stride + dx - padding
                        if 0 <= ix < w:
                            xrow[ix] += crow[ox]


def conv2d_forward(object x_in, object w_in, int stride, int padding):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] weight = np.ascontiguousarray(w_in, dtype=np.float32)
    cdef int n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int co = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef int oh = (h + 2 * padding - kh) // stride + 1
    cdef int ow = (w + 2 * padding - kw) // stride + 1
    cdef int ck = ci * kh * kw
    out_arr = np.empty((n, co, oh, ow), dtype=np.float32)
    cols_arr = np.empty((ck, oh * ow), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] out = out_arr
    cdef cnp.ndarray[cnp.float32_t, ndim=2] cols = cols_arr
    cdef int b
    cdef int nthreads = _num_threads
    with nogil:
        for b in range(n):
            _im2col(&x[b, 0, 0, 0], &cols[0, 0], ci, h, w, kh, kw, stride, padding, oh, ow, nthreads)
            _gemm_rowmajor(&weight[0, 0, 0, 0], &cols[0, 0], &out[b, 0, 0, 0], co, oh * ow, ck, 0.0)
    return out_arr


def conv2d_backward_weight(object x_in, object g_in, int stride, int padding, int kh, int kw):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] grad_out = np.ascontiguousarray(g_in, dtype=np.float32)
    cdef int n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int co = grad_out.shape[1], oh = grad_out.shape[2], ow = grad_out.shape[3]
    cdef int ck = ci * kh * kw
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float32)
    cols_arr = np.empty((ck, oh * ow), dtype=np.float32)
    colsT_arr = np.empty((oh * ow, ck), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] gw = gw_arr
    cdef cnp.ndarray[cnp.float32_t, ndim=2] cols = cols_arr
    cdef cnp.ndarray[cnp.float32_t, ndim=2] colsT = colsT_arr
    cdef int b, i, j
    cdef int nthreads = _num_threads
    cdef char tc = b'T'
    cdef char nc = b'N'
    cdef float one = 1.0
    cdef int m_, n_, k_
    with nogil:
        for b in range(n):
            _im2col(&x[b, 0, 0, 0], &cols[0, 0], ci, h, w, kh, kw, stride, padding, oh, ow, nthreads)
            # gw[co, ck] += go[b][co, N] @ cols[ck, N]^T
            # row-major with B transposed: Fortran gemm('T','N')
            m_ = ck; n_ = co; k_ = oh * ow
            sgemm(&tc, &nc, &m_, &n_, &k_, &one, &cols[0, 0], &k_,
                  &grad_out[b, 0, 0, 0], &k_, &one, &gw[0, 0, 0, 0], &m_)
    return gw_arr


def conv2d_backward_input(object g_in, object w_in, int stride, int padding, int in_h, int in_w):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] grad_out = np.ascontiguousarray(g_in, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] weight = np.ascontiguousarray(w_in, dtype=np.float32)
    cdef int n = grad_out.shape[0], co = grad_out.shape[1]
    cdef int oh = grad_out.shape[2], ow = grad_out.shape[3]
    cdef int ci = weight.shape[1], kh = weight.shape[2], kw = weight.shape[3]
    cdef int ck = ci * kh * kw
    gx_arr = np.zeros((n, ci, in_h, in_w), dtype=np.float32)
    cols_arr = np.empty((ck, oh * ow), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=4] gx = gx_arr
    cdef cnp.ndarray[cnp.float32_t, ndim=2] cols = cols_arr
    cdef int b
    cdef int nthreads = _num_threads
    cdef char tc = b'T'
    cdef char nc = b'N'
    cdef float one = 1.0
    cdef float zero = 0.0
    cdef int m_, n_, k_
    with nogil:
        for b in range(n):
            # cols[ck, N] = W[co, ck]^T @ go[b][co, N]
            m_ = oh * ow; n_ = ck; k_ = co
            sgemm(&nc, &tc, &m_, &n_, &k_, &one, &grad_out[b, 0, 0, 0], &m_,
                  &weight[0, 0, 0, 0], &n_, &zero, &cols[0, 0], &m_)
            _col2im(&cols[0, 0], &gx[b, 0, 0, 0], ci, in_h, in_w, kh, kw,
                    stride, padding, oh, ow, nthreads)
    return gx_arr


def resample_bilinear_forward(object src_in, int out_h, int out_w,
                              double sy, double sx, double oy, double ox):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] src = np.ascontiguousarray(src_in, dtype=np.float32)
    cdef int n = src.shape[0], c = src.shape[1], h = src.shape[2], w = src.shape[3]
    out_arr = np.empty((n, c, out_h, out_w), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] o = out_arr
    cdef cnp.float32_t[:, :, :, ::1] sv = src
    cdef cnp.int64_t[::1] y0 = np.empty(out_h, dtype=np.int64)
    cdef cnp.int64_t[::1] y1 = np.empty(out_h, dtype=np.int64)
    cdef cnp.int64_t[::1] x0 = np.empty(out_w, dtype=np.int64)
    cdef cnp.int64_t[::1] x1 = np.empty(out_w, dtype=np.int64)
    cdef cnp.float32_t[::1] fy = np.empty(out_h, dtype=np.float32)
    cdef cnp.float32_t[::1] fx = np.empty(out_w, dtype=np.float32)
    cdef int i, j, b, ch
    cdef double v
    for i in range(out_h):
        v = (i + 0.5) * sy + oy - 0.5
        if v < 0: v = 0
        if v > h - 1: v = h - 1
        y0[i] = <cnp.int64_t>v
        y1[i] = y0[i] + 1 if y0[i] + 1 < h else h - 1
        fy[i] = <float>(v - y0[i])
    for j in range(out_w):
        v = (j + 0.5) * sx + ox - 0.5
        if v < 0: v = 0
        if v > w - 1: v = w - 1
        x0[j] = <cnp.int64_t>v
        x1[j] = x0[j] + 1 if x0[j] + 1 < w else w - 1
        fx[j] = <float>(v - x0[j])
    cdef float tl, tr, bl, br, top, bot
    cdef int nthreads = _num_threads
    for b in range(n):
        for ch in prange(c, nogil=True, num_threads=nthreads, schedule='static'):
            for i in range(out_h):
                for j in range(out_w):
                    tl = sv[b, ch, y0[i], x0[j]]
                    tr = sv[b, ch, y0[i], x1[j]]
                    bl = sv[b, ch, y1[i], x0[j]]
                    br = sv[b, ch, y1[i], x1[j]]
                    top = tl + (tr - tl) * fx[j]
                    bot = bl + (br - bl) * fx[j]
                    o[b, ch, i, j] = top + (bot - top) * fy[i]
    return out_arr


def resample_bilinear_backward(object g_in, int src_h, int src_w,
                               double sy, double sx, double oy, double ox):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] grad_out = np.ascontiguousarray(g_in, dtype=np.float32)
    cdef int n = grad_out.shape[0], c = grad_out.shape[1]
    cdef int out_h = grad_out.shape[2], out_w = grad_out.shape[3]
    gs_arr = np.zeros((n, c, src_h, src_w), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] gs = gs_arr
    cdef cnp.float32_t[:, :, :, ::1] gv = grad_out
    cdef cnp.int64_t[::1] y0 = np.empty(out_h, dtype=np.int64)
    cdef cnp.int64_t[::1] y1 = np.empty(out_h, dtype=np.int64)
    cdef cnp.int64_t[::1] x0 = np.empty(out_w, dtype=np.int64)
    cdef cnp.int64_t[::1] x1 = np.empty(out_w, dtype=np.int64)
    cdef cnp.float32_t[::1] fy = np.empty(out_h, dtype=np.float32)
    cdef cnp.float32_t[::1] fx = np.empty(out_w, dtype=np.float32)
    cdef int i, j, b, ch
    cdef double v
    for i in range(out_h):
        v = (i + 0.5) * sy + oy - 0.5
        if v < 0: v = 0
        if v > src_h - 1: v = src_h - 1
        y0[i] = <cnp.int64_t>v
        y1[i] = y0[i] + 1 if y0[i] + 1 < src_h else src_h - 1
        fy[i] = <float>(v - y0[i])
    for j in range(out_w):
        v = (j + 0.5) * sx + ox - 0.5
        if v < 0: v = 0
        if v > src_w - 1: v = src_w - 1
        x0[j] = <cnp.int64_t>v
        x1[j] = x0[j] + 1 if x0[j] + 1 < src_w else src_w - 1
        fx[j] = <float>(v - x0[j])
    cdef float g
    cdef int nthreads = _num_threads
    # scatter; parallel over channels keeps writes disjoint
    for b in range(n):
        for ch in prange(c, nogil=True, num_threads=nthreads, schedule='static'):
            for i in range(out_h):
                for j in range(out_w):
                    g = gv[b, ch, i, j]
                    gs[b, ch, y0[i], x0[j]] += g * (1 - fy[i]) * (1 - fx[j])
                    gs[b, ch, y0[i], x1[j]] += g * (1 - fy[i]) * fx[j]
                    gs[b, ch, y1[i], x0[j]] += g * fy[i] * (1 - fx[j])
                    gs[b, ch, y1[i], x1[j]] += g * fy[i] * fx[j]
    return gs_arr


def maxpool2_forward(object x_in):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = h // 2, ow = w // 2
    out_arr = np.empty((n, c, oh, ow), dtype=np.float32)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int8)
    cdef cnp.float32_t[:, :, :, ::1] o = out_arr
    cdef cnp.int8_t[:, :, :, ::1] a = arg_arr
    cdef cnp.float32_t[:, :, :, ::1] xv = x
    cdef int b, ch, i, j, dy, dx, best
    cdef float m, v
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    m = xv[b, ch, 2 * i, 2 * j]
                    best = 0
                    for dy in range(2):
                        for dx in range(2):
                            v = xv[b, ch, 2 * i + dy, 2 * j + dx]
                            if v > m:
                                m = v
                                best = dy * 2 + dx
                    o[b, ch, i, j] = m
                    a[b, ch, i, j] = <cnp.int8_t>best
    return out_arr, arg_arr


def maxpool2_backward(object g_in, object arg_in, int h, int w):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] grad_out = np.ascontiguousarray(g_in, dtype=np.float32)
    cdef cnp.ndarray[cnp.int8_t, ndim=4] argmax = np.ascontiguousarray(arg_in)
    cdef int n = grad_out.shape[0], c = grad_out.shape[1]
    cdef int oh = grad_out.shape[2], ow = grad_out.shape[3]
    gx_arr = np.zeros((n, c, h, w), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] gx = gx_arr
    cdef cnp.float32_t[:, :, :, ::1] gv = grad_out
    cdef cnp.int8_t[:, :, :, ::1] av = argmax
    cdef int b, ch, i, j, k
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    k = av[b, ch, i, j]
                    gx[b, ch, 2 * i + (k >> 1), 2 * j + (k & 1)] += gv[b, ch, i, j]
    return gx_arr
