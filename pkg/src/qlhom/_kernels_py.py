"""Pure NumPy versions of the compiled element kernels.

Signatures and results match ``qlhom._kernels`` exactly up to rounding.
"""
import numpy as np


def local_stiffness(grads, areas, tensors):
    """Element matrices |T| G A G^T, shape (nt, 3, 3)."""
    AG = np.einsum("tkl,til->tik", tensors, grads)
    return np.einsum("tik,tjk->tij", grads, AG) * areas[:, None, None]


def element_fluxes(values, cell_dofs, grads, weights):
    """Integrated fluxes sum_t |t| A_t grad(u)|_t for several nodal vectors.

    Parameters
    ----------
    values : (n, r) nodal coefficients; ``cell_dofs`` entries of -1 mean zero
    cell_dofs : (nt, 3) local dof index per element vertex
    grads : (nt, 3, 2) barycentric gradients
    weights : (nt, 2, 2) area-weighted tensors |t| A_t

    Returns
    -------
    (nt, 2, r) per-element fluxes
    """
    padded = np.vstack([values, np.zeros((1, values.shape[1]))])
    u = padded[cell_dofs]                     # (nt, 3, r)
    g = np.einsum("tad,tar->tdr", grads, u)  # (nt, 2, r)
    return np.einsum("tde,ter->tdr", weights, g)


def group_sum(x, group_size):
    """Sum consecutive blocks of ``group_size`` rows."""
    return x.reshape((-1, group_size) + x.shape[1:]).sum(axis=1)


# --- sparse Cholesky, reference implementation ---------------------------
# Plain loops mirroring the compiled kernels; only used for testing and
# tiny problems since the fallback patch solver goes through SuperLU.

def _ereach(Ap, Ai, k, parent, flag):
    out = []
    flag[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        path = []
        while flag[i] != k:
            path.append(i)
            flag[i] = k
            i = parent[i]
        out = path + out
    return out


def chol_symbolic(Ap, Ai):
    n = len(Ap) - 1
    parent = np.full(n, -1, dtype=np.intc)
    anc = np.full(n, -1, dtype=np.intc)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = anc[i]
                anc[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    counts = np.ones(n, dtype=np.intc)
    flag = np.full(n, -1)
    for k in range(n):
        for i in _ereach(Ap, Ai, k, parent, flag):
            counts[i] += 1
    Lp = np.zeros(n + 1, dtype=np.intc)
    np.cumsum(counts, out=Lp[1:])
    return Lp, parent


def chol_numeric(Ap, Ai, Ax, Lp, parent):
    n = len(Ap) - 1
    Li = np.empty(Lp[n], dtype=np.intc)
    Lx = np.empty(Lp[n])
    c = np.array(Lp[:n], dtype=np.int64)
    flag = np.full(n, -1)
    x = np.zeros(n)
    for k in range(n):
        pattern = _ereach(Ap, Ai, k, parent, flag)
        x[k] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            if Ai[p] <= k:
                x[Ai[p]] += Ax[p]
        d = x[k]
        x[k] = 0.0
        for i in pattern:
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Li[c[i]] = k
            Lx[c[i]] = lki
            c[i] += 1
        if d <= 0.0:
            raise ValueError(f"matrix not positive definite at pivot {k}")
        Li[c[k]] = k
        Lx[c[k]] = np.sqrt(d)
        c[k] += 1
    return Li, Lx


def chol_forward(Lp, Li, Lx, B):
    for j in range(len(Lp) - 1):
        B[j] /= Lx[Lp[j]]
        sl = slice(Lp[j] + 1, Lp[j + 1])
        B[Li[sl]] -= np.outer(Lx[sl], B[j])


def chol_backward(Lp, Li, Lx, B):
    for j in range(len(Lp) - 2, -1, -1):
        sl = slice(Lp[j] + 1, Lp[j + 1])
        B[j] -= Lx[sl] @ B[Li[sl]]
        B[j] /= Lx[Lp[j]]
