# Compiled convolution kernels: C-level im2col plus BLAS dgemm.
#
# These are the hot inner loops of training; everything else in the package
# is ordinary numpy.  Contracts match bbkd.kernels._fallback exactly.

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_ab(double* a, double* b, double* c, int m, int n, int k) noexcept nogil:
    # C[m,n] = A[m,k] @ B[k,n], all row-major.  Row-major C viewed as
    # column-major is C^T = B^T A^T, so call dgemm on the swapped operands.
    cdef char nt = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&nt, &nt, &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _gemm_abt(double* a, double* b, double* c, int m, int n, int k) noexcept nogil:
    # C[m,n] = A[m,k] @ B[n,k]^T, all row-major.
    cdef char tr = b'T'
    cdef char nt = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tr, &nt, &n, &m, &k, &one, b, &k, a, &k, &zero, c, &n)


cdef void _im2col(const double[:, :, ::1] xp, double[:, ::1] col,
                  int c_in, int h, int w, int kh, int kw) noexcept nogil:
    cdef int c, di, dj, i, r
    for c in range(c_in):
        for di in range(kh):
            for dj in range(kw):
                r = (c * kh + di) * kw + dj
                for i in range(h):
                    memcpy(&col[r, i * w], &xp[c, i + di, dj], w * sizeof(double))


def _pad(cnp.ndarray x, int kh, int kw):
    return np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))


def conv2d_forward(cnp.ndarray x, cnp.ndarray w, cnp.ndarray b):
    cdef int c_out = w.shape[0]
    cdef int c_in = w.shape[1]
    cdef int kh = w.shape[2]
    cdef int kw = w.shape[3]
    cdef int h = x.shape[1]
    cdef int wd = x.shape[2]
    xp = _pad(np.ascontiguousarray(x), kh, kw)
    col = np.empty((c_in * kh * kw, h * wd), dtype=np.float64)
    cdef double[:, :, ::1] xpv = xp
    cdef double[:, ::1] colv = col
    _im2col(xpv, colv, c_in, h, wd, kh, kw)
    w2 = np.ascontiguousarray(w.reshape(c_out, c_in * kh * kw))
    y = np.empty((c_out, h * wd), dtype=np.float64)
    cdef double[:, ::1] w2v = w2
    cdef double[:, ::1] yv = y
    _gemm_ab(&w2v[0, 0], &colv[0, 0], &yv[0, 0], c_out, h * wd, c_in * kh * kw)
    y += b[:, None]
    return y.reshape(c_out, h, wd)


def conv2d_grad_kernels(cnp.ndarray x, cnp.ndarray gy, int kh, int kw):
    cdef int c_out = gy.shape[0]
    cdef int c_in = x.shape[0]
    cdef int h = x.shape[1]
    cdef int wd = x.shape[2]
    xp = _pad(np.ascontiguousarray(x), kh, kw)
    col = np.empty((c_in * kh * kw, h * wd), dtype=np.float64)
    cdef double[:, :, ::1] xpv = xp
    cdef double[:, ::1] colv = col
    _im2col(xpv, colv, c_in, h, wd, kh, kw)
    gy2 = np.ascontiguousarray(gy.reshape(c_out, h * wd))
    gw = np.empty((c_out, c_in * kh * kw), dtype=np.float64)
    cdef double[:, ::1] gy2v = gy2
    cdef double[:, ::1] gwv = gw
    _gemm_abt(&gy2v[0, 0], &colv[0, 0], &gwv[0, 0], c_out, c_in * kh * kw, h * wd)
    return gw.reshape(c_out, c_in, kh, kw)


def conv2d_grad_input(cnp.ndarray w, cnp.ndarray gy):
    cdef int c_out = w.shape[0]
    cdef int c_in = w.shape[1]
    cdef int kh = w.shape[2]
    cdef int kw = w.shape[3]
    cdef int h = gy.shape[1]
    cdef int wd = gy.shape[2]
    wf = np.ascontiguousarray(
        w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, c_out * kh * kw)
    )
    gyp = _pad(np.ascontiguousarray(gy), kh, kw)
    col = np.empty((c_out * kh * kw, h * wd), dtype=np.float64)
    cdef double[:, :, ::1] gypv = gyp
    cdef double[:, ::1] colv = col
    _im2col(gypv, colv, c_out, h, wd, kh, kw)
    gx = np.empty((c_in, h * wd), dtype=np.float64)
    cdef double[:, ::1] wfv = wf
    cdef double[:, ::1] gxv = gx
    _gemm_ab(&wfv[0, 0], &colv[0, 0], &gxv[0, 0], c_in, h * wd, c_out * kh * kw)
    return gx.reshape(c_in, h, wd)
