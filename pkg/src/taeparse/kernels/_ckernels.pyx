# cython: cdivision=True
"""Compiled kernels: same signatures and semantics as kernels/pure.py.

Row reductions accumulate in double, matching the pure backend's float64
accumulation; outputs are cast back to the input dtype.

boundscheck/wraparound are disabled per loop function, not module-wide:
the module-wide form also rewrites negative tuple indices like shape[-1]
in the Python-level wrappers into raw C indexing.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt, INFINITY

NAME = "compiled"

cdef double _LN_EPS = 1e-5

ctypedef fused real:
    float
    double


def softmax_fwd(x, mask=None):
    out = np.empty_like(x)
    if mask is None:
        _softmax_fwd_nomask(x.reshape(-1, x.shape[-1]), out.reshape(-1, x.shape[-1]))
    else:
        _softmax_fwd_mask(x.reshape(-1, x.shape[-1]),
                          np.ascontiguousarray(mask, dtype=np.uint8).reshape(-1, x.shape[-1]),
                          out.reshape(-1, x.shape[-1]))
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def _softmax_fwd_nomask(real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double m, s, e
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, k):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(k):
                e = exp(<double> x[i, j] - m)
                out[i, j] = <real> e
                s += e
            if s == 0.0:
                s = 1.0
            for j in range(k):
                out[i, j] = <real> (out[i, j] / s)


@cython.boundscheck(False)
@cython.wraparound(False)
def _softmax_fwd_mask(real[:, ::1] x, const unsigned char[:, ::1] mask,
                      real[:, ::1] out):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double m, s, e
    cdef bint any_live
    with nogil:
        for i in range(n):
            m = -INFINITY
            any_live = False
            for j in range(k):
                if not mask[i, j]:
                    any_live = True
                    if x[i, j] > m:
                        m = x[i, j]
            if not any_live:
                for j in range(k):
                    out[i, j] = 0.0
                continue
            s = 0.0
            for j in range(k):
                if mask[i, j]:
                    out[i, j] = 0.0
                else:
                    e = exp(<double> x[i, j] - m)
                    out[i, j] = <real> e
                    s += e
            if s == 0.0:
                s = 1.0
            for j in range(k):
                out[i, j] = <real> (out[i, j] / s)


def softmax_bwd(p, g):
    out = np.empty_like(p)
    _softmax_bwd(p.reshape(-1, p.shape[-1]), g.reshape(-1, p.shape[-1]),
                 out.reshape(-1, p.shape[-1]))
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def _softmax_bwd(real[:, ::1] p, real[:, ::1] g, real[:, ::1] out):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1], i, j
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(k):
                dot += <double> p[i, j] * <double> g[i, j]
            for j in range(k):
                out[i, j] = <real> (p[i, j] * (g[i, j] - dot))


def norm_fwd(x):
    y = np.empty_like(x)
    inv = np.empty(x.shape[:-1], dtype=x.dtype)
    _norm_fwd(x.reshape(-1, x.shape[-1]), y.reshape(-1, x.shape[-1]), inv.reshape(-1))
    return y, inv[..., None]


@cython.boundscheck(False)
@cython.wraparound(False)
def _norm_fwd(real[:, ::1] x, real[:, ::1] y, real[::1] inv):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double mu, var, d, s
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(k):
                mu += <double> x[i, j]
            mu /= k
            var = 0.0
            for j in range(k):
                d = <double> x[i, j] - mu
                var += d * d
            var /= k
            s = 1.0 / sqrt(var + _LN_EPS)
            inv[i] = <real> s
            for j in range(k):
                y[i, j] = <real> ((<double> x[i, j] - mu) * s)


def norm_bwd(y, inv, g):
    out = np.empty_like(y)
    _norm_bwd(y.reshape(-1, y.shape[-1]), np.ascontiguousarray(inv).reshape(-1),
              g.reshape(-1, y.shape[-1]), out.reshape(-1, y.shape[-1]))
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def _norm_bwd(real[:, ::1] y, real[::1] inv, real[:, ::1] g, real[:, ::1] out):
    cdef Py_ssize_t n = y.shape[0], k = y.shape[1], i, j
    cdef double gm, gym
    with nogil:
        for i in range(n):
            gm = 0.0
            gym = 0.0
            for j in range(k):
                gm += <double> g[i, j]
                gym += <double> g[i, j] * <double> y[i, j]
            gm /= k
            gym /= k
            for j in range(k):
                out[i, j] = <real> (<double> inv[i] * (<double> g[i, j] - gm
                                                       - <double> y[i, j] * gym))


def copy_mix_fwd(gen_probs, copy_w, src_ids, p_gen):
    out = np.empty_like(gen_probs)
    _copy_mix_fwd(gen_probs, copy_w, np.ascontiguousarray(src_ids, dtype=np.int64),
                  p_gen, out)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def _copy_mix_fwd(real[:, :, ::1] gen_probs, real[:, :, ::1] copy_w,
                  long long[:, ::1] src_ids, real[:, ::1] p_gen, real[:, :, ::1] out):
    cdef Py_ssize_t B = gen_probs.shape[0], T = gen_probs.shape[1]
    cdef Py_ssize_t V = gen_probs.shape[2], S = copy_w.shape[2]
    cdef Py_ssize_t b, t, y, j
    cdef double pg
    with nogil:
        for b in range(B):
            for t in range(T):
                pg = <double> p_gen[b, t]
                for y in range(V):
                    out[b, t, y] = <real> (pg * <double> gen_probs[b, t, y])
                for j in range(S):
                    out[b, t, src_ids[b, j]] = <real> (
                        <double> out[b, t, src_ids[b, j]]
                        + (1.0 - pg) * <double> copy_w[b, t, j])


def copy_mix_bwd(gen_probs, copy_w, src_ids, p_gen, g):
    d_gen = np.empty_like(gen_probs)
    d_w = np.empty_like(copy_w)
    d_pg = np.empty_like(p_gen)
    _copy_mix_bwd(gen_probs, copy_w, np.ascontiguousarray(src_ids, dtype=np.int64),
                  p_gen, g, d_gen, d_w, d_pg)
    return d_gen, d_w, d_pg


@cython.boundscheck(False)
@cython.wraparound(False)
def _copy_mix_bwd(real[:, :, ::1] gen_probs, real[:, :, ::1] copy_w,
                  long long[:, ::1] src_ids, real[:, ::1] p_gen, real[:, :, ::1] g,
                  real[:, :, ::1] d_gen, real[:, :, ::1] d_w, real[:, ::1] d_pg):
    cdef Py_ssize_t B = gen_probs.shape[0], T = gen_probs.shape[1]
    cdef Py_ssize_t V = gen_probs.shape[2], S = copy_w.shape[2]
    cdef Py_ssize_t b, t, y, j
    cdef double pg, acc_gen, acc_copy, gj
    with nogil:
        for b in range(B):
            for t in range(T):
                pg = <double> p_gen[b, t]
                acc_gen = 0.0
                for y in range(V):
                    d_gen[b, t, y] = <real> (pg * <double> g[b, t, y])
                    acc_gen += <double> g[b, t, y] * <double> gen_probs[b, t, y]
                acc_copy = 0.0
                for j in range(S):
                    gj = <double> g[b, t, src_ids[b, j]]
                    d_w[b, t, j] = <real> ((1.0 - pg) * gj)
                    acc_copy += gj * <double> copy_w[b, t, j]
                d_pg[b, t] = <real> (acc_gen - acc_copy)


def scatter_add_rows(table, ids, rows):
    _scatter_add_rows(table, np.ascontiguousarray(ids, dtype=np.int64).reshape(-1),
                      rows.reshape(-1, rows.shape[-1]))


@cython.boundscheck(False)
@cython.wraparound(False)
def _scatter_add_rows(real[:, ::1] table, long long[::1] ids, real[:, ::1] rows):
    cdef Py_ssize_t n = ids.shape[0], d = table.shape[1], i, j
    cdef long long r
    with nogil:
        for i in range(n):
            r = ids[i]
            for j in range(d):
                table[r, j] += rows[i, j]


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
    _adam_step(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
               lr, beta1, beta2, eps, t)


@cython.boundscheck(False)
@cython.wraparound(False)
def _adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
               double lr, double beta1, double beta2, double eps, long long t):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * <double> m[i] + (1.0 - beta1) * <double> g[i]
            vi = beta2 * <double> v[i] + (1.0 - beta2) * <double> g[i] * <double> g[i]
            m[i] = <real> mi
            v[i] = <real> vi
            p[i] = <real> (<double> p[i] - (lr / bc1) * mi / (sqrt(vi / bc2) + eps))
