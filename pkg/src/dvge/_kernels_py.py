"""Numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` one-to-one. Elementwise kernels evaluate the same
floating-point expression in the same order as the compiled versions, so
both backends agree bitwise on everything except ``log_softmax_*``, where
the reduction order differs (agreement there is to a few ulp).
"""
import numpy as np


def leaky_relu_forward(x, slope):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_backward(x, grad, slope):
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    return np.where(x > 0.0, grad, slope * grad)


def log_softmax_forward(x):
    """Row-wise log-softmax of a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(out, grad):
    out = np.asarray(out, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    return grad - np.exp(out) * grad.sum(axis=1, keepdims=True)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bias1, bias2):
    """In-place Adam update of ``param``, ``m`` and ``v``.

    ``bias1``/``bias2`` are the bias-correction denominators ``1 - beta**t``.
    """
    m[...] = beta1 * m + (1.0 - beta1) * grad
    v[...] = beta2 * v + (1.0 - beta2) * (grad * grad)
    param[...] = param - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def perturb_clip(z, f_sens, f_task, eta1, eta2, eps_ratio):
    """Return ``z + clamp(eta1*f_sens - eta2*f_task, -eps, eps)`` with ``eps = eps_ratio*|z|``."""
    z = np.asarray(z, dtype=np.float64)
    raw = eta1 * np.asarray(f_sens, dtype=np.float64) - eta2 * np.asarray(f_task, dtype=np.float64)
    eps = eps_ratio * np.abs(z)
    out = z + np.minimum(np.maximum(raw, -eps), eps)
    # rounding of the sum can overshoot the bound by half an ulp; step back toward z
    over = np.abs(out - z) > eps
    while over.any():
        out[over] = np.nextafter(out[over], z[over])
        over = np.abs(out - z) > eps
    return out


def confusion_counts(pred, label, group):
    """Counts indexed ``[group, label, pred]`` for binary arrays."""
    pred = np.asarray(pred, dtype=np.int64)
    label = np.asarray(label, dtype=np.int64)
    group = np.asarray(group, dtype=np.int64)
    flat = group * 4 + label * 2 + pred
    return np.bincount(flat, minlength=8).reshape(2, 2, 2).astype(np.int64)
