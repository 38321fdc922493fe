# cython: language_level=3
"""Compiled hot kernels. See ``_kernels_py.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log, nextafter, sqrt

cnp.import_array()


def _flat(x):
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1)


def leaky_relu_forward(x, double slope):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double a
    for i in range(n):
        a = xv[i]
        ov[i] = a if a > 0.0 else slope * a
    return out


def leaky_relu_backward(x, grad, double slope):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(grad, dtype=np.float64)
    if g.shape != arr.shape:
        g = np.ascontiguousarray(np.broadcast_to(g, arr.shape))
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] gv = g.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] if xv[i] > 0.0 else slope * gv[i]
    return out


def log_softmax_forward(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[:, ::1] xv = arr
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, rows = xv.shape[0], cols = xv.shape[1]
    cdef double mx, total, lse
    for i in range(rows):
        mx = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > mx:
                mx = xv[i, j]
        total = 0.0
        for j in range(cols):
            total += exp(xv[i, j] - mx)
        lse = log(total)
        for j in range(cols):
            ov[i, j] = (xv[i, j] - mx) - lse
    return out


def log_softmax_backward(out, grad):
    o = np.ascontiguousarray(out, dtype=np.float64)
    g = np.ascontiguousarray(grad, dtype=np.float64)
    res = np.empty_like(o)
    cdef double[:, ::1] ov = o
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] rv = res
    cdef Py_ssize_t i, j, rows = ov.shape[0], cols = ov.shape[1]
    cdef double total
    for i in range(rows):
        total = 0.0
        for j in range(cols):
            total += gv[i, j]
        for j in range(cols):
            rv[i, j] = gv[i, j] - exp(ov[i, j]) * total
    return res


def adam_update(cnp.ndarray param, grad, cnp.ndarray m, cnp.ndarray v,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update needs C-contiguous param/m/v buffers")
    g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef double[::1] pv = param.reshape(-1)
    cdef double[::1] gv = g.reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double gi, one_b1 = 1.0 - beta1, one_b2 = 1.0 - beta2
    for i in range(n):
        gi = gv[i]
        mv[i] = beta1 * mv[i] + one_b1 * gi
        vv[i] = beta2 * vv[i] + one_b2 * (gi * gi)
        pv[i] = pv[i] - lr * (mv[i] / bias1) / (sqrt(vv[i] / bias2) + eps)


def perturb_clip(z, f_sens, f_task, double eta1, double eta2, double eps_ratio):
    zarr = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(zarr)
    cdef double[::1] zv = zarr.reshape(-1)
    cdef double[::1] sv = _flat(f_sens)
    cdef double[::1] tv = _flat(f_task)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = zv.shape[0]
    cdef double raw, eps, zi, out_i
    for i in range(n):
        zi = zv[i]
        raw = eta1 * sv[i] - eta2 * tv[i]
        eps = eps_ratio * (zi if zi >= 0.0 else -zi)
        if raw < -eps:
            raw = -eps
        if raw > eps:
            raw = eps
        out_i = zi + raw
        while fabs(out_i - zi) > eps:
            out_i = nextafter(out_i, zi)
        ov[i] = out_i
    return out


def confusion_counts(pred, label, group):
    cdef cnp.int64_t[::1] p = np.ascontiguousarray(pred, dtype=np.int64)
    cdef cnp.int64_t[::1] y = np.ascontiguousarray(label, dtype=np.int64)
    cdef cnp.int64_t[::1] s = np.ascontiguousarray(group, dtype=np.int64)
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] c = counts
    cdef Py_ssize_t i, n = p.shape[0]
    for i in range(n):
        c[s[i], y[i], p[i]] += 1
    return counts
