"""Quasi-interpolation I_H = I_c o Pi_H from a fine level onto V_H.

Pi_H is the elementwise L2 projection onto discontinuous P1 on the coarse
mesh, I_c averages the one-sided vertex values over the free coarse vertices.
Both are stored as sparse matrices acting on fine nodal vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import MeshHierarchy, TriMesh

# inverse of the reference P1 mass matrix [[2,1,1],[1,2,1],[1,1,2]] / 12, times |K|
_MASS_INV = 3.0 * np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]])
_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def fine_barycentric(hierarchy: MeshHierarchy, coarse_level: int, fine_level: int) -> np.ndarray:
    """Barycentric coordinates of each fine element's vertices in its coarse ancestor.

    Shape (nt_fine, 3 fine vertices, 3 coarse vertices).
    """
    coarse = hierarchy.levels[coarse_level]
    fine = hierarchy.levels[fine_level]
    anc = hierarchy.ancestor(np.arange(fine.n_triangles), fine_level, coarse_level)
    x = fine.vertices[fine.triangles]                    # (nt, 3, 2)
    P = coarse.vertices[coarse.triangles[anc]]           # (nt, 3, 2)
    G = coarse.gradients[anc]                            # (nt, 3, 2)
    # lambda_i(x) = 1 + grad_i . (x - P_i)
    return 1.0 + np.einsum("tid,taid->tai", G, x[:, :, None, :] - P[:, None, :, :])


def build_l2_projection(hierarchy: MeshHierarchy, coarse_level: int, fine_level: int) -> sp.csr_matrix:
    """Matrix (3*nt_coarse, nv_fine): fine nodal values -> vertex values of Pi_H v per coarse element.

    Row ``3*K + i`` is the value of (Pi_H v)|_K at the i-th vertex of K.
    """
    coarse = hierarchy.levels[coarse_level]
    fine = hierarchy.levels[fine_level]
    anc = hierarchy.ancestor(np.arange(fine.n_triangles), fine_level, coarse_level)
    lam = fine_barycentric(hierarchy, coarse_level, fine_level)
    # moments int_t v phi_i^K = sum_{a,b} v_a M_t[a,b] lam[b,i]
    mom = np.einsum("t,ab,tbi->tia", fine.areas, _MASS_REF, lam)           # (nt, 3 coarse, 3 fine)
    # apply M_K^{-1}
    coef = np.einsum("ij,tja->tia", _MASS_INV, mom) / coarse.areas[anc][:, None, None]
    rows = (3 * anc[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
    cols = np.broadcast_to(fine.triangles[:, None, :], coef.shape)
    return sp.csr_matrix((coef.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(3 * coarse.n_triangles, fine.n_vertices))


def build_vertex_averaging(mesh: TriMesh) -> sp.csr_matrix:
    """Matrix (n_free, 3*nt): discontinuous P1 vertex values -> averaged free vertex values."""
    t = mesh.triangles.ravel()
    count = np.bincount(t, minlength=mesh.n_vertices)
    free_index = np.full(mesh.n_vertices, -1)
    free = mesh.free_vertices
    free_index[free] = np.arange(free.size)
    keep = free_index[t] >= 0
    cols = np.flatnonzero(keep)
    rows = free_index[t[keep]]
    vals = 1.0 / count[t[keep]]
    return sp.csr_matrix((vals, (rows, cols)), shape=(free.size, 3 * mesh.n_triangles))


@dataclass
class InterpolationOperator:
    """Explicit sparse I_H: fine nodal values -> coarse free-vertex values."""

    coarse_level: int
    fine_level: int
    matrix: sp.csr_matrix
    hierarchy: MeshHierarchy

    @classmethod
    def build(cls, hierarchy: MeshHierarchy, coarse_level: int = None, fine_level: int = None):
        c = hierarchy.coarse_level if coarse_level is None else coarse_level
        f = hierarchy.fine_level if fine_level is None else fine_level
        key = ("IH", c, f)
        cache = hierarchy.levels[f]._cache
        if key not in cache:
            Pi = build_l2_projection(hierarchy, c, f)
            Ic = build_vertex_averaging(hierarchy.levels[c])
            m = (Ic @ Pi).tocsr()
            m.eliminate_zeros()
            cache[key] = m
        return cls(c, f, cache[key], hierarchy)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Coarse nodal vector (boundary zeros included) of I_H v."""
        coarse = self.hierarchy.levels[self.coarse_level]
        out = np.zeros(coarse.n_vertices)
        out[coarse.free_vertices] = self.matrix @ np.asarray(v, dtype=float)
        return out

    def constraint_matrix(self) -> sp.csr_matrix:
        """C with ker I_H on the fine level = {v : C v = 0}; one row per free coarse vertex."""
        return self.matrix


def apply_IH(hierarchy: MeshHierarchy, v: np.ndarray, coarse_level: int = None,
             fine_level: int = None) -> np.ndarray:
    return InterpolationOperator.build(hierarchy, coarse_level, fine_level).apply(v)
