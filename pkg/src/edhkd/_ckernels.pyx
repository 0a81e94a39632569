# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in _pykernels.py."""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline double _clip6(double y) noexcept nogil:
    # same NaN propagation as np.clip
    y = 0.0 if 0.0 > y else y
    return 6.0 if 6.0 < y else y


cdef inline void _plane_stats(const double* x, Py_ssize_t N, Py_ssize_t Q,
                              double* mean, double* var, double* inv, double eps) noexcept nogil:
    cdef Py_ssize_t i, q
    cdef const double* row
    cdef double d
    for q in range(Q):
        mean[q] = 0.0
        var[q] = 0.0
    for i in range(N):
        row = x + i * Q
        for q in range(Q):
            mean[q] += row[q]
    for q in range(Q):
        mean[q] /= N
    for i in range(N):
        row = x + i * Q
        for q in range(Q):
            d = row[q] - mean[q]
            var[q] += d * d
    for q in range(Q):
        var[q] /= N
        inv[q] = 1.0 / sqrt(var[q] + eps)


def bn_train_forward(x_in, double eps):
    cdef const double[:, :, ::1] x = x_in
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1], Q = x.shape[2]
    cdef Py_ssize_t p, i, q
    xhat_a = np.empty((P, N, Q))
    mean_a = np.empty((P, 1, Q))
    var_a = np.empty((P, 1, Q))
    inv_a = np.empty((P, 1, Q))
    cdef double[:, :, ::1] xhat = xhat_a
    cdef double[:, :, ::1] mean = mean_a
    cdef double[:, :, ::1] var = var_a
    cdef double[:, :, ::1] inv = inv_a
    cdef const double* xr
    cdef double* hr
    cdef double* mu
    cdef double* iv
    with nogil:
        for p in range(P):
            mu = &mean[p, 0, 0]
            iv = &inv[p, 0, 0]
            _plane_stats(&x[p, 0, 0], N, Q, mu, &var[p, 0, 0], iv, eps)
            for i in range(N):
                xr = &x[p, i, 0]
                hr = &xhat[p, i, 0]
                for q in range(Q):
                    hr[q] = (xr[q] - mu[q]) * iv[q]
    return xhat_a, mean_a, var_a, inv_a


def bn_backward(dxhat_in, xhat_in, inv_in):
    cdef const double[:, :, ::1] dxhat = dxhat_in
    cdef const double[:, :, ::1] xhat = xhat_in
    cdef const double[:, :, ::1] inv_std = inv_in
    cdef Py_ssize_t P = xhat.shape[0], N = xhat.shape[1], Q = xhat.shape[2]
    cdef Py_ssize_t p, i, q
    dx_a = np.empty((P, N, Q))
    cdef double[:, :, ::1] dx = dx_a
    cdef double[::1] s1a = np.empty(Q)
    cdef double[::1] s2a = np.empty(Q)
    cdef double* s1 = &s1a[0]
    cdef double* s2 = &s2a[0]
    cdef const double* gr
    cdef const double* hr
    cdef const double* iv
    cdef double* dr
    with nogil:
        for p in range(P):
            iv = &inv_std[p, 0, 0]
            for q in range(Q):
                s1[q] = 0.0
                s2[q] = 0.0
            for i in range(N):
                gr = &dxhat[p, i, 0]
                hr = &xhat[p, i, 0]
                for q in range(Q):
                    s1[q] += gr[q]
                    s2[q] += gr[q] * hr[q]
            for i in range(N):
                gr = &dxhat[p, i, 0]
                hr = &xhat[p, i, 0]
                dr = &dx[p, i, 0]
                for q in range(Q):
                    dr[q] = (iv[q] / N) * (N * gr[q] - s1[q] - hr[q] * s2[q])
    return dx_a


def relu6_forward(x):
    cdef const double[::1] xf = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    out_a = np.empty(xf.shape[0])
    cdef double[::1] out = out_a
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(xf.shape[0]):
            v = xf[i]
            out[i] = 0.0 if v < 0.0 else (6.0 if v > 6.0 else v)
    return out_a.reshape(np.shape(x))


def relu6_backward(x, g):
    cdef const double[::1] xf = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef const double[::1] gf = np.ascontiguousarray(np.broadcast_to(g, np.shape(x)), dtype=np.float64).reshape(-1)
    out_a = np.empty(xf.shape[0])
    cdef double[::1] out = out_a
    cdef Py_ssize_t i
    with nogil:
        for i in range(xf.shape[0]):
            out[i] = gf[i] if (xf[i] > 0.0 and xf[i] < 6.0) else 0.0
    return out_a.reshape(np.shape(x))


def bn_relu6_forward(x_in, gamma_in, beta_in, double eps):
    cdef const double[:, :, ::1] x = x_in
    cdef const double[:, :, ::1] gamma = gamma_in
    cdef const double[:, :, ::1] beta = beta_in
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1], Q = x.shape[2]
    cdef Py_ssize_t p, i, q
    out_a = np.empty((P, N, Q))
    xhat_a = np.empty((P, N, Q))
    mean_a = np.empty((P, 1, Q))
    var_a = np.empty((P, 1, Q))
    inv_a = np.empty((P, 1, Q))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, :, ::1] xhat = xhat_a
    cdef double[:, :, ::1] mean = mean_a
    cdef double[:, :, ::1] var = var_a
    cdef double[:, :, ::1] inv = inv_a
    cdef const double* xr
    cdef const double* gm
    cdef const double* bt
    cdef double* hr
    cdef double* orow
    cdef double* mu
    cdef double* iv
    with nogil:
        for p in range(P):
            mu = &mean[p, 0, 0]
            iv = &inv[p, 0, 0]
            gm = &gamma[p, 0, 0]
            bt = &beta[p, 0, 0]
            _plane_stats(&x[p, 0, 0], N, Q, mu, &var[p, 0, 0], iv, eps)
            for i in range(N):
                xr = &x[p, i, 0]
                hr = &xhat[p, i, 0]
                orow = &out[p, i, 0]
                for q in range(Q):
                    hr[q] = (xr[q] - mu[q]) * iv[q]
                for q in range(Q):
                    orow[q] = _clip6(hr[q] * gm[q] + bt[q])
    return out_a, xhat_a, mean_a, var_a, inv_a


def bn_relu6_backward(g_in, out_in, xhat_in, gamma_in, inv_in):
    cdef const double[:, :, ::1] g = g_in
    cdef const double[:, :, ::1] out = out_in
    cdef const double[:, :, ::1] xhat = xhat_in
    cdef const double[:, :, ::1] gamma = gamma_in
    cdef const double[:, :, ::1] inv_std = inv_in
    cdef Py_ssize_t P = xhat.shape[0], N = xhat.shape[1], Q = xhat.shape[2]
    cdef Py_ssize_t p, i, q
    dx_a = np.empty((P, N, Q))
    dgamma_a = np.empty((P, 1, Q))
    dbeta_a = np.empty((P, 1, Q))
    cdef double[:, :, ::1] dx = dx_a
    cdef double[:, :, ::1] dgamma = dgamma_a
    cdef double[:, :, ::1] dbeta = dbeta_a
    cdef const double* gr
    cdef const double* orow
    cdef const double* hr
    cdef const double* gm
    cdef const double* iv
    cdef double* dr
    cdef double* dg
    cdef double* db
    cdef double dy, o
    with nogil:
        for p in range(P):
            dg = &dgamma[p, 0, 0]
            db = &dbeta[p, 0, 0]
            gm = &gamma[p, 0, 0]
            iv = &inv_std[p, 0, 0]
            for q in range(Q):
                dg[q] = 0.0
                db[q] = 0.0
            # dx holds dy until the final pass
            for i in range(N):
                gr = &g[p, i, 0]
                orow = &out[p, i, 0]
                hr = &xhat[p, i, 0]
                dr = &dx[p, i, 0]
                for q in range(Q):
                    o = orow[q]
                    dy = gr[q] if ((o > 0.0) & (o < 6.0)) else 0.0
                    dr[q] = dy
                    dg[q] += dy * hr[q]
                    db[q] += dy
            for i in range(N):
                hr = &xhat[p, i, 0]
                dr = &dx[p, i, 0]
                for q in range(Q):
                    dr[q] = (iv[q] / N) * gm[q] * (N * dr[q] - db[q] - hr[q] * dg[q])
    return dx_a, dgamma_a, dbeta_a


def levinson_durbin(r_in, int order):
    cdef const double[::1] r = np.ascontiguousarray(r_in, dtype=np.float64)
    a_a = np.zeros(order)
    cdef double[::1] a = a_a
    cdef double[::1] prev = np.zeros(order)
    cdef double err, acc, k
    cdef int i, j
    if r[0] <= 0.0:
        return a_a
    err = r[0]
    with nogil:
        for i in range(order):
            acc = r[i + 1]
            for j in range(i):
                acc = acc - a[j] * r[i - j]
            if err <= 0.0:
                break
            k = acc / err
            for j in range(i):
                prev[j] = a[j]
            for j in range(i):
                a[j] = prev[j] - k * prev[i - 1 - j]
            a[i] = k
            err = err * (1.0 - k * k)
    return a_a
