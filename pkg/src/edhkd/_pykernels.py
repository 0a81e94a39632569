"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Arrays for the batch-norm kernels are 3-D ``(pre, n, post)`` with statistics
reduced over the middle axis.
"""
import numpy as np


def bn_train_forward(x, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, mean, var, inv_std


def bn_backward(dxhat, xhat, inv_std):
    n = xhat.shape[1]
    s1 = dxhat.sum(axis=1, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=1, keepdims=True)
    return (inv_std / n) * (n * dxhat - s1 - xhat * s2)


def relu6_forward(x):
    return np.clip(x, 0.0, 6.0)


def relu6_backward(x, g):
    return np.where((x > 0.0) & (x < 6.0), g, 0.0)


def levinson_durbin(r, order):
    """AR coefficients from autocorrelation lags ``r[0..order]``.

    Returns ``a`` such that ``x[t] ~ sum_i a[i] * x[t-1-i]``. A zero-energy
    input yields zeros.
    """
    a = np.zeros(order)
    if r[0] <= 0.0:
        return a
    err = r[0]
    for i in range(order):
        acc = r[i + 1]
        for j in range(i):
            acc -= a[j] * r[i - j]
        if err <= 0.0:
            break
        k = acc / err
        prev = a[:i].copy()
        for j in range(i):
            a[j] = prev[j] - k * prev[i - 1 - j]
        a[i] = k
        err *= 1.0 - k * k
    return a


def bn_relu6_forward(x, gamma, beta, eps):
    xhat, mean, var, inv_std = bn_train_forward(x, eps)
    return np.clip(xhat * gamma + beta, 0.0, 6.0), xhat, mean, var, inv_std


def bn_relu6_backward(g, out, xhat, gamma, inv_std):
    dy = np.where((out > 0.0) & (out < 6.0), g, 0.0)
    dgamma = (dy * xhat).sum(axis=1, keepdims=True)
    dbeta = dy.sum(axis=1, keepdims=True)
    n = xhat.shape[1]
    dx = (inv_std / n) * gamma * (n * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta
