# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the ensemble MLP and RBF kernels.

Same contracts as ``_pykernels``; loops are fused so no (M,B,H) temporaries
are allocated beyond one hidden-activation buffer.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()

DEF MSE = 0


cdef inline double _tanh(double a) nogil:
    # glibc tanh is several times slower than exp; series below 0.05 avoids the 1 - e cancellation
    cdef double e, a2
    if fabs(a) < 0.05:
        a2 = a * a
        return a * (1.0 + a2 * (-1.0 / 3.0 + a2 * (2.0 / 15.0 + a2 * (-17.0 / 315.0 + a2 * (62.0 / 2835.0)))))
    if a > 0.0:
        e = exp(-2.0 * a)
        return (1.0 - e) / (1.0 + e)
    e = exp(2.0 * a)
    return (e - 1.0) / (e + 1.0)


def mlp_forward(const double[:, :, ::1] W1, const double[:, ::1] b1,
                const double[:, :, ::1] W2, const double[:, ::1] b2,
                const double[:, :, :] X):
    cdef Py_ssize_t M = W1.shape[0], H = W1.shape[1], D = W1.shape[2]
    cdef Py_ssize_t O = W2.shape[1], B = X.shape[1]
    cdef Py_ssize_t m, b, h, d, o, mx
    cdef double acc
    out_arr = np.empty((M, B, O))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] hid = np.empty(H)
    cdef bint bcast = X.shape[0] == 1
    for m in range(M):
        mx = 0 if bcast else m
        for b in range(B):
            for h in range(H):
                acc = b1[m, h]
                for d in range(D):
                    acc += W1[m, h, d] * X[mx, b, d]
                hid[h] = _tanh(acc)
            for o in range(O):
                acc = b2[m, o]
                for h in range(H):
                    acc += W2[m, o, h] * hid[h]
                out[m, b, o] = acc
    return out_arr


def mlp_grad(const double[:, :, ::1] W1, const double[:, ::1] b1,
             const double[:, :, ::1] W2, const double[:, ::1] b2,
             const double[:, :, :] X, const double[:, :, :] T, mask, int loss_kind):
    cdef Py_ssize_t M = W1.shape[0], H = W1.shape[1], D = W1.shape[2]
    cdef Py_ssize_t O = W2.shape[1], B = X.shape[1]
    cdef Py_ssize_t m, b, h, d, o, mx
    cdef double acc, r, zmax, zsum, tsum, inv_b = 1.0 / B, lossm
    cdef bint bcast = X.shape[0] == 1
    cdef bint has_mask = mask is not None
    cdef const double[:, :, :] K
    if has_mask:
        K = mask
    loss_arr = np.zeros(M)
    gW1_arr = np.zeros((M, H, D))
    gb1_arr = np.zeros((M, H))
    gW2_arr = np.zeros((M, O, H))
    gb2_arr = np.zeros((M, O))
    cdef double[::1] loss = loss_arr
    cdef double[:, :, ::1] gW1 = gW1_arr
    cdef double[:, ::1] gb1 = gb1_arr
    cdef double[:, :, ::1] gW2 = gW2_arr
    cdef double[:, ::1] gb2 = gb2_arr
    cdef double[::1] hid = np.empty(H)
    cdef double[::1] y = np.empty(O)
    cdef double[::1] dy = np.empty(O)
    cdef double[::1] da = np.empty(H)
    for m in range(M):
        mx = 0 if bcast else m
        lossm = 0.0
        for b in range(B):
            for h in range(H):
                acc = b1[m, h]
                for d in range(D):
                    acc += W1[m, h, d] * X[mx, b, d]
                hid[h] = _tanh(acc)
            for o in range(O):
                acc = b2[m, o]
                for h in range(H):
                    acc += W2[m, o, h] * hid[h]
                y[o] = acc
            if loss_kind == MSE:
                for o in range(O):
                    r = y[o] - T[m, b, o]
                    if has_mask:
                        r = r * K[m, b, o]
                    lossm += r * r
                    dy[o] = 2.0 * r * inv_b
            else:
                zmax = y[0]
                for o in range(1, O):
                    if y[o] > zmax:
                        zmax = y[o]
                zsum = 0.0
                for o in range(O):
                    zsum += exp(y[o] - zmax)
                tsum = 0.0
                for o in range(O):
                    tsum += T[m, b, o]
                for o in range(O):
                    r = y[o] - zmax - log(zsum)
                    lossm -= T[m, b, o] * r
                    dy[o] = (exp(r) * tsum - T[m, b, o]) * inv_b
            for h in range(H):
                da[h] = 0.0
            for o in range(O):
                gb2[m, o] += dy[o]
                for h in range(H):
                    gW2[m, o, h] += dy[o] * hid[h]
                    da[h] += dy[o] * W2[m, o, h]
            for h in range(H):
                da[h] *= 1.0 - hid[h] * hid[h]
                gb1[m, h] += da[h]
                for d in range(D):
                    gW1[m, h, d] += da[h] * X[mx, b, d]
        loss[m] = lossm * inv_b
    return loss_arr, gW1_arr, gb1_arr, gW2_arr, gb2_arr


def rbf_sum(const double[:, ::1] a, const double[:, ::1] b, double gamma):
    cdef Py_ssize_t i, j, k, na = a.shape[0], nb = b.shape[0], d = a.shape[1]
    cdef double total = 0.0, s, diff
    for i in range(na):
        for j in range(nb):
            s = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                s += diff * diff
            total += exp(-gamma * s)
    return total


def rbf_block_sums(const double[:, :, ::1] S, const double[:, ::1] R, double gamma):
    cdef Py_ssize_t M = S.shape[0], n = S.shape[1], d = S.shape[2], r = R.shape[0]
    cdef Py_ssize_t m, q, i, j, k
    cdef double s, diff, acc
    G_arr = np.zeros((M, M))
    c_arr = np.zeros(M)
    cdef double[:, ::1] G = G_arr
    cdef double[::1] c = c_arr
    for m in range(M):
        for q in range(m, M):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for k in range(d):
                        diff = S[m, i, k] - S[q, j, k]
                        s += diff * diff
                    acc += exp(-gamma * s)
            G[m, q] = acc
            G[q, m] = acc
        acc = 0.0
        for i in range(n):
            for j in range(r):
                s = 0.0
                for k in range(d):
                    diff = S[m, i, k] - R[j, k]
                    s += diff * diff
                acc += exp(-gamma * s)
        c[m] = acc
    return G_arr, c_arr
