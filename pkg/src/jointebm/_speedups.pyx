# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the swish-MLP energy backbone.

Same entry points as ``_kernels_py``: a fused forward pass for logits and
fused forward+backward passes for the joint / semi-conditional energies and
their input gradients. Matrix products go through BLAS dgemm; the
elementwise work (swish, softmax heads, seeding) is plain C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c = a @ b for row-major a (m,k), b (k,n), c (m,n)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c = a @ b.T for row-major a (m,k), b (n,k), c (m,n)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &n, &m, &k, &one, &b[0, 0], &k, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef void _add_bias_swish(double[:, ::1] z, double[::1] b, double[:, ::1] h) noexcept nogil:
    # z holds the matmul result; adds bias in place, writes swish(z) to h
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j] + b[j]
            z[i, j] = v
            h[i, j] = v * _sigmoid(v)


cdef void _add_bias(double[:, ::1] z, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] += b[j]


cdef void _mul_swish_grad(double[:, ::1] g, double[:, ::1] z) noexcept nogil:
    # g *= swish'(z), with swish'(z) = s * (1 + z * (1 - s))
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            s = _sigmoid(z[i, j])
            g[i, j] *= s * (1.0 + z[i, j] * (1.0 - s))


cdef _forward(list ws, list bs, double[:, ::1] x):
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t i, n_layers = len(ws)
    zs = []
    hs = [np.asarray(x)]
    cdef double[:, ::1] h = x
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] z
    cdef double[:, ::1] hn
    for i in range(n_layers - 1):
        w = ws[i]
        b = bs[i]
        z_arr = np.empty((batch, w.shape[1]))
        h_arr = np.empty((batch, w.shape[1]))
        z = z_arr
        hn = h_arr
        _gemm_nn(h, w, z)
        _add_bias_swish(z, b, hn)
        zs.append(z_arr)
        hs.append(h_arr)
        h = hn
    w = ws[n_layers - 1]
    b = bs[n_layers - 1]
    logits_arr = np.empty((batch, w.shape[1]))
    cdef double[:, ::1] logits = logits_arr
    _gemm_nn(h, w, logits)
    _add_bias(logits, b)
    return hs, zs, logits_arr


cdef _backward_to_input(list ws, list zs, cnp.ndarray g_logits):
    cdef Py_ssize_t i, n_layers = len(ws)
    cdef Py_ssize_t batch = g_logits.shape[0]
    cdef double[:, ::1] g = g_logits
    cdef double[:, ::1] w
    cdef double[:, ::1] z
    cdef double[:, ::1] gn
    w = ws[n_layers - 1]
    out_arr = np.empty((batch, w.shape[0]))
    gn = out_arr
    _gemm_nt(g, w, gn)
    for i in range(n_layers - 2, -1, -1):
        z = zs[i]
        _mul_swish_grad(gn, z)
        w = ws[i]
        nxt_arr = np.empty((batch, w.shape[0]))
        g = gn
        gn = nxt_arr
        _gemm_nt(g, w, gn)
        out_arr = nxt_arr
    return out_arr


def mlp_logits(list ws, list bs, double[:, ::1] x):
    """Forward pass only; returns logits shaped (B, K, 2)."""
    _, _, logits = _forward(ws, bs, x)
    return logits.reshape(x.shape[0], -1, 2)


def joint_energy_grad(list ws, list bs, double[:, ::1] x, long[:, ::1] y):
    """Energy sum_k logits[k][y_k] and its gradient in x."""
    hs, zs, logits_arr = _forward(ws, bs, x)
    cdef double[:, ::1] logits = logits_arr
    cdef Py_ssize_t batch = logits.shape[0]
    cdef Py_ssize_t k = logits.shape[1] // 2
    e_arr = np.zeros(batch)
    seed_arr = np.zeros((batch, logits.shape[1]))
    cdef double[::1] e = e_arr
    cdef double[:, ::1] seed = seed_arr
    cdef Py_ssize_t bb, kk, col
    with nogil:
        for bb in range(batch):
            for kk in range(k):
                col = 2 * kk + y[bb, kk]
                e[bb] += logits[bb, col]
                seed[bb, col] = 1.0
    g = _backward_to_input(ws, zs, seed_arr)
    return e_arr, g


def semicond_energy_grad(list ws, list bs, double[:, ::1] x,
                         long[::1] cond_idx, long[::1] cond_val):
    """Semi-conditional energy and gradient in x.

    Conditioned attributes contribute their selected logit, free attributes
    a logsumexp over their pair (softmax seed in the backward pass). Empty
    conditioning gives the marginal energy.
    """
    hs, zs, logits_arr = _forward(ws, bs, x)
    cdef double[:, ::1] logits = logits_arr
    cdef Py_ssize_t batch = logits.shape[0]
    cdef Py_ssize_t k = logits.shape[1] // 2
    e_arr = np.zeros(batch)
    seed_arr = np.zeros((batch, logits.shape[1]))
    cdef double[::1] e = e_arr
    cdef double[:, ::1] seed = seed_arr
    val_arr = np.full(k, -1, dtype=np.int64)
    cdef long[::1] val_of = val_arr
    cdef Py_ssize_t i, bb, kk, col
    cdef double l0, l1, m, e0, e1, s
    for i in range(cond_idx.shape[0]):
        val_of[cond_idx[i]] = cond_val[i]
    with nogil:
        for bb in range(batch):
            for kk in range(k):
                if val_of[kk] >= 0:
                    col = 2 * kk + val_of[kk]
                    e[bb] += logits[bb, col]
                    seed[bb, col] = 1.0
                else:
                    l0 = logits[bb, 2 * kk]
                    l1 = logits[bb, 2 * kk + 1]
                    m = l0 if l0 > l1 else l1
                    e0 = exp(l0 - m)
                    e1 = exp(l1 - m)
                    s = e0 + e1
                    e[bb] += m + log(s)
                    seed[bb, 2 * kk] = e0 / s
                    seed[bb, 2 * kk + 1] = e1 / s
    g = _backward_to_input(ws, zs, seed_arr)
    return e_arr, g
