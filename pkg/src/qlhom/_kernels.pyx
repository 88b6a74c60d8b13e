# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled element kernels and a sparse Cholesky for the patch problems."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def local_stiffness(const double[:, :, ::1] grads, const double[::1] areas,
                    const double[:, :, ::1] tensors):
    cdef Py_ssize_t nt = grads.shape[0], t, i, j
    out = np.empty((nt, 3, 3))
    cdef double[:, :, ::1] K = out
    cdef double a00, a01, a10, a11, gx, gy, hx, hy, w
    for t in range(nt):
        a00 = tensors[t, 0, 0]; a01 = tensors[t, 0, 1]
        a10 = tensors[t, 1, 0]; a11 = tensors[t, 1, 1]
        w = areas[t]
        for i in range(3):
            gx = grads[t, i, 0]; gy = grads[t, i, 1]
            for j in range(3):
                hx = grads[t, j, 0]; hy = grads[t, j, 1]
                K[t, i, j] = w * (gx * (a00 * hx + a01 * hy) + gy * (a10 * hx + a11 * hy))
    return out


def element_fluxes(const double[:, ::1] values, const cnp.int64_t[:, ::1] cell_dofs,
                   const double[:, :, ::1] grads, const double[:, :, ::1] weights):
    cdef Py_ssize_t nt = cell_dofs.shape[0], r = values.shape[1], t, a, k
    cdef cnp.int64_t d
    out = np.empty((nt, 2, r))
    cdef double[:, :, ::1] F = out
    cdef double gx, gy
    for t in range(nt):
        for k in range(r):
            gx = 0.0
            gy = 0.0
            for a in range(3):
                d = cell_dofs[t, a]
                if d >= 0:
                    gx += grads[t, a, 0] * values[d, k]
                    gy += grads[t, a, 1] * values[d, k]
            F[t, 0, k] = weights[t, 0, 0] * gx + weights[t, 0, 1] * gy
            F[t, 1, k] = weights[t, 1, 0] * gx + weights[t, 1, 1] * gy
    return out


def group_sum(x, Py_ssize_t group_size):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = arr.shape[0], m = arr.size // n if n else 0
    cdef Py_ssize_t ng = n // group_size, g, s, k
    out = np.zeros((ng,) + arr.shape[1:])
    cdef double[:, ::1] src = arr.reshape(n, m)
    cdef double[:, ::1] dst = out.reshape(ng, m)
    for g in range(ng):
        for s in range(g * group_size, (g + 1) * group_size):
            for k in range(m):
                dst[g, k] += src[s, k]
    return out


# --- sparse Cholesky (up-looking, fixed ordering) ------------------------

cdef Py_ssize_t _ereach(const int[::1] Ap, const int[::1] Ai, Py_ssize_t k,
                        const int[::1] parent, int[::1] s, int[::1] flag) noexcept nogil:
    cdef Py_ssize_t top = s.shape[0], p, i, ln
    flag[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        ln = 0
        while flag[i] != k:
            s[ln] = i
            ln += 1
            flag[i] = k
            i = parent[i]
        while ln > 0:
            top -= 1
            ln -= 1
            s[top] = s[ln]
    return top


def chol_symbolic(const int[::1] Ap, const int[::1] Ai):
    """Elimination tree and column pointers of L for a symmetric CSC pattern."""
    cdef Py_ssize_t n = Ap.shape[0] - 1, k, p, i, inext, top
    parent_a = np.full(n, -1, dtype=np.intc)
    cdef int[::1] parent = parent_a
    cdef int[::1] anc = np.full(n, -1, dtype=np.intc)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = anc[i]
                anc[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    counts_a = np.ones(n, dtype=np.intc)
    cdef int[::1] counts = counts_a
    cdef int[::1] s = np.empty(n, dtype=np.intc)
    cdef int[::1] flag = np.full(n, -1, dtype=np.intc)
    for k in range(n):
        top = _ereach(Ap, Ai, k, parent, s, flag)
        for p in range(top, n):
            counts[s[p]] += 1
    Lp = np.zeros(n + 1, dtype=np.intc)
    np.cumsum(counts_a, out=Lp[1:])
    return Lp, parent_a


def chol_numeric(const int[::1] Ap, const int[::1] Ai, const double[::1] Ax,
                 const int[::1] Lp, const int[::1] parent):
    """Numeric factor K = L L^T; returns (Li, Lx) with the diagonal first in each column."""
    cdef Py_ssize_t n = Ap.shape[0] - 1, k, p, i, top, q
    cdef Py_ssize_t nnz = Lp[n]
    Li_a = np.empty(nnz, dtype=np.intc)
    Lx_a = np.empty(nnz)
    cdef int[::1] Li = Li_a
    cdef double[::1] Lx = Lx_a
    cdef int[::1] c = np.array(Lp[:n], dtype=np.intc)
    cdef int[::1] s = np.empty(n, dtype=np.intc)
    cdef int[::1] flag = np.full(n, -1, dtype=np.intc)
    cdef double[::1] x = np.zeros(n)
    cdef double d, lki
    cdef bint ok = True
    with nogil:
        for k in range(n):
            top = _ereach(Ap, Ai, k, parent, s, flag)
            x[k] = 0.0
            for p in range(Ap[k], Ap[k + 1]):
                if Ai[p] <= k:
                    x[Ai[p]] += Ax[p]
            d = x[k]
            x[k] = 0.0
            for q in range(top, n):
                i = s[q]
                lki = x[i] / Lx[Lp[i]]
                x[i] = 0.0
                for p in range(Lp[i] + 1, c[i]):
                    x[Li[p]] -= Lx[p] * lki
                d -= lki * lki
                p = c[i]
                c[i] += 1
                Li[p] = k
                Lx[p] = lki
            if d <= 0.0:
                ok = False
                break
            p = c[k]
            c[k] += 1
            Li[p] = k
            Lx[p] = sqrt(d)
    if not ok:
        raise ValueError(f"matrix not positive definite at pivot {k}")
    return Li_a, Lx_a


def chol_forward(const int[::1] Lp, const int[::1] Li, const double[::1] Lx, double[:, ::1] B):
    """In place B <- L^{-1} B for a row-major block of right-hand sides."""
    cdef Py_ssize_t n = Lp.shape[0] - 1, r = B.shape[1], j, p, k, i
    cdef double l
    with nogil:
        for j in range(n):
            l = Lx[Lp[j]]
            for k in range(r):
                B[j, k] /= l
            for p in range(Lp[j] + 1, Lp[j + 1]):
                i = Li[p]
                l = Lx[p]
                for k in range(r):
                    B[i, k] -= l * B[j, k]


def chol_backward(const int[::1] Lp, const int[::1] Li, const double[::1] Lx, double[:, ::1] B):
    """In place B <- L^{-T} B."""
    cdef Py_ssize_t n = Lp.shape[0] - 1, r = B.shape[1], j, p, k, i
    cdef double l
    with nogil:
        for j in range(n - 1, -1, -1):
            for p in range(Lp[j] + 1, Lp[j + 1]):
                i = Li[p]
                l = Lx[p]
                for k in range(r):
                    B[j, k] -= l * B[i, k]
            l = Lx[Lp[j]]
            for k in range(r):
                B[j, k] /= l
