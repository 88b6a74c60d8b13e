"""Localized element correctors in the kernel of I_H.

For every coarse element T and direction j the corrector q_{T,j} solves

    a_{D_T}(w, q_{T,j}) = int_T grad(w) . (A e_j)   for all w in W_{D_T},

with W_{D_T} the fine functions vanishing outside D_T = N^l(T) whose
quasi-interpolant is zero.  The constraint is imposed with Lagrange
multipliers, one per free coarse vertex whose I_H row touches the patch.

Everything that does not depend on the coefficient (patch dofs, stiffness
sparsity slices, constraint rows) lives in :class:`CorrectorLevel` and is
built once; a sample then costs one sparse factorization per patch.

Two patch solvers exist.  With the compiled kernels the patch stiffness is
factored by a Cholesky with a fill-reducing ordering and symbolic structure
fixed at setup; the Schur complement then needs only the forward sweep,
since C K^{-1} C^T = W^T W with W = L^{-1} P C^T.  Without them SuperLU
handles each factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fem import as_tensor_field
from .mesh import MeshHierarchy, patch
from .quasi_interp import InterpolationOperator


class CorrectorError(RuntimeError):
    pass


class FineStiffnessPattern:
    """Fixed CSC sparsity of the fine stiffness matrix with a scatter map for its values."""

    def __init__(self, mesh):
        t = mesh.triangles
        n = mesh.n_vertices
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        M = sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        M.sum_duplicates()
        M.sort_indices()
        self.indptr = M.indptr
        self.indices = M.indices
        self.shape = (n, n)
        self.nnz = M.indices.size
        # CSC entries are ordered by (col, row); locate every local entry
        keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(M.indptr)) * n + M.indices
        self.scatter = np.searchsorted(keys, cols.astype(np.int64) * n + rows)

    def values(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape)


@dataclass
class PatchStructure:
    """Coefficient-independent data for the corrector problems of one coarse element."""

    element: int
    coarse_elements: np.ndarray      # sorted, patch D_T on the coarse level
    fine_elements: np.ndarray        # descendants, grouped by coarse element
    dofs: np.ndarray                 # global fine vertices interior to D_T
    cell_dofs: np.ndarray            # (nt_patch, 3) local dof or -1
    own_slice: slice                 # fine elements of T inside fine_elements
    K_indptr: np.ndarray
    K_indices: np.ndarray
    K_positions: np.ndarray          # into the global fine stiffness data
    constraint: sp.csr_matrix        # active I_H rows restricted to dofs
    constraint_rows: np.ndarray      # free coarse vertex indices of those rows
    plan: Optional["CholeskyPlan"] = None


@dataclass
class CholeskyPlan:
    """Ordering and symbolic factorization of one patch stiffness."""

    perm: np.ndarray                 # position k of the permuted system holds dof perm[k]
    indptr: np.ndarray               # permuted CSC pattern (intc)
    indices: np.ndarray
    positions: np.ndarray            # into the global fine stiffness data
    Lp: np.ndarray
    parent: np.ndarray
    constraint_t: sp.csr_matrix      # P C^T, shape (n, m)


class CorrectorLevel:
    """Corrector machinery for one (coarse level, fine level, oversampling) triple."""

    def __init__(self, hierarchy: MeshHierarchy, ell: int, coarse_level: Optional[int] = None,
                 fine_level: Optional[int] = None, solver: str = "auto"):
        if solver == "auto":
            solver = "cholesky" if kernels.BACKEND == "cython" else "superlu"
        if solver not in ("cholesky", "superlu"):
            raise CorrectorError(f"unknown patch solver {solver!r}")
        self.solver = solver
        if ell < 0:
            raise CorrectorError("oversampling parameter must be nonnegative")
        self.hierarchy = hierarchy
        self.ell = int(ell)
        self.coarse_level = hierarchy.coarse_level if coarse_level is None else coarse_level
        self.fine_level = hierarchy.fine_level if fine_level is None else fine_level
        if self.fine_level < self.coarse_level:
            raise CorrectorError("fine level must not be coarser than the coarse level")
        self.coarse = hierarchy.levels[self.coarse_level]
        self.fine = hierarchy.levels[self.fine_level]
        self.ratio = 4 ** (self.fine_level - self.coarse_level)
        self.trivial = self.fine_level == self.coarse_level
        self._patches: Dict[int, PatchStructure] = {}
        if not self.trivial:
            self.pattern = _pattern_for(self.fine)
            self.IH = InterpolationOperator.build(hierarchy, self.coarse_level, self.fine_level).matrix
            self._IH_csc = self.IH.tocsc()

    def coarse_patch(self, T: int) -> np.ndarray:
        return patch(self.coarse, [T], self.ell)

    def structure(self, T: int) -> PatchStructure:
        if T not in self._patches:
            self._patches[T] = self._build_structure(T)
        return self._patches[T]

    def _build_structure(self, T: int) -> PatchStructure:
        h = self.hierarchy
        fine = self.fine
        cpatch = self.coarse_patch(T)
        felems = h.descendants(cpatch, self.coarse_level, self.fine_level)
        inside = np.zeros(fine.n_triangles, dtype=bool)
        inside[felems] = True
        v_in = np.zeros(fine.n_vertices, dtype=bool)
        v_in[fine.triangles[inside].ravel()] = True
        v_out = np.zeros(fine.n_vertices, dtype=bool)
        v_out[fine.triangles[~inside].ravel()] = True
        dof_mask = v_in & ~v_out & ~fine.boundary_vertex_flags
        dofs = np.flatnonzero(dof_mask)
        local = np.full(fine.n_vertices, -1, dtype=np.int64)
        local[dofs] = np.arange(dofs.size)
        cell_dofs = local[fine.triangles[felems]]

        k = int(np.searchsorted(cpatch, T))
        own = slice(k * self.ratio, (k + 1) * self.ratio)

        # slice of the global stiffness: tag data with positions
        tagged = self.pattern.matrix(np.arange(1, self.pattern.nnz + 1, dtype=float))
        sub = tagged[dofs][:, dofs].tocsc()
        sub.sort_indices()
        positions = sub.data.astype(np.int64) - 1

        C = self._IH_csc[:, dofs].tocsr()
        C.eliminate_zeros()
        active = np.flatnonzero(np.diff(C.indptr) > 0)
        C = C[active]
        s = PatchStructure(T, cpatch, felems, dofs, cell_dofs, own,
                           sub.indptr.copy(), sub.indices.copy(), positions, C, active)
        if self.solver == "cholesky" and dofs.size:
            s.plan = self._plan(s)
        return s

    def _plan(self, s: PatchStructure) -> CholeskyPlan:
        n = s.dofs.size
        # the ordering depends on the pattern only; any SPD values will do
        if not hasattr(self, "_laplace_data"):
            self._laplace_data = self.stiffness_values(
                np.broadcast_to(np.eye(2), (self.fine.n_triangles, 2, 2)))
        K = sp.csc_matrix((self._laplace_data[s.K_positions], s.K_indices, s.K_indptr),
                          shape=(n, n))
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        perm = np.argsort(lu.perm_c)
        tag = sp.csc_matrix((s.K_positions + 1.0, s.K_indices, s.K_indptr), shape=(n, n))
        P = tag[perm][:, perm].tocsc()
        P.sort_indices()
        indptr = P.indptr.astype(np.intc)
        indices = P.indices.astype(np.intc)
        Lp, parent = kernels.chol_symbolic(indptr, indices)
        return CholeskyPlan(perm, indptr, indices, P.data.astype(np.int64) - 1, Lp, parent,
                            s.constraint[:, perm].T.tocsr())

    # --- per-sample work -------------------------------------------------

    def element_weights(self, fine_tensors: np.ndarray) -> np.ndarray:
        """|t| A_t for every fine element, shape (nt, 2, 2)."""
        return self.fine.areas[:, None, None] * fine_tensors

    def stiffness_values(self, fine_tensors: np.ndarray) -> np.ndarray:
        local = kernels.local_stiffness(self.fine.gradients, self.fine.areas,
                                        np.ascontiguousarray(fine_tensors))
        return self.pattern.values(local)

    def solve_patch(self, T: int, fine_tensors: np.ndarray,
                    stiffness_data: Optional[np.ndarray] = None,
                    weights: Optional[np.ndarray] = None) -> Tuple[PatchStructure, np.ndarray]:
        """Corrector values on the patch dofs, shape (n_dofs, 2) for j = 1, 2."""
        if self.trivial:
            raise CorrectorError("no fine scales: fine level equals coarse level")
        s = self.structure(T)
        if stiffness_data is None:
            stiffness_data = self.stiffness_values(fine_tensors)
        if weights is None:
            weights = self.element_weights(fine_tensors)
        n = s.dofs.size
        if n == 0:
            return s, np.zeros((0, 2))
        # right-hand side: int_T grad(lambda) . (A e_j)
        own = s.fine_elements[s.own_slice]
        contrib = np.einsum("tad,tdj->taj", self.fine.gradients[own], weights[own])
        cd = s.cell_dofs[s.own_slice].ravel()
        ok = cd >= 0
        b = np.zeros((n, 2))
        np.add.at(b, cd[ok], contrib.reshape(-1, 2)[ok])

        if s.plan is not None:
            return s, self._solve_cholesky(T, s, stiffness_data, b)
        K = sp.csc_matrix((stiffness_data[s.K_positions], s.K_indices, s.K_indptr), shape=(n, n))
        try:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise CorrectorError(f"patch stiffness singular for T={T}: {exc}") from exc
        C = s.constraint
        m = C.shape[0]
        if m == 0:
            return s, lu.solve(b)
        rhs = np.empty((n, m + 2))
        rhs[:, :2] = b
        rhs[:, 2:] = C.T.toarray()
        Y = lu.solve(rhs)
        x0, KinvCt = Y[:, :2], Y[:, 2:]
        S = C @ KinvCt
        try:
            lam = sla.solve(S, C @ x0, assume_a="sym")
        except (sla.LinAlgError, ValueError) as exc:
            raise CorrectorError(
                f"singular saddle system for T={T}: {m} constraints on {n} dofs") from exc
        q = x0 - KinvCt @ lam
        return s, q

    def _solve_cholesky(self, T: int, s: PatchStructure, data: np.ndarray,
                        b: np.ndarray) -> np.ndarray:
        pl = s.plan
        try:
            Li, Lx = kernels.chol_numeric(pl.indptr, pl.indices, data[pl.positions], pl.Lp,
                                          pl.parent)
        except ValueError as exc:
            raise CorrectorError(f"patch stiffness not positive definite for T={T}: {exc}") from exc
        n, m = pl.constraint_t.shape
        R = np.empty((n, m + 2))
        R[:, :2] = b[pl.perm]
        if m:
            R[:, 2:] = pl.constraint_t.toarray()
        kernels.chol_forward(pl.Lp, Li, Lx, R)
        Wb, W = R[:, :2], R[:, 2:]
        if m:
            try:
                lam = sla.solve(W.T @ W, W.T @ Wb, assume_a="pos")
            except (sla.LinAlgError, ValueError) as exc:
                raise CorrectorError(
                    f"singular saddle system for T={T}: {m} constraints on {n} dofs") from exc
            Y = np.ascontiguousarray(Wb - W @ lam)
        else:
            Y = np.ascontiguousarray(Wb)
        kernels.chol_backward(pl.Lp, Li, Lx, Y)
        q = np.empty_like(Y)
        q[pl.perm] = Y
        return q

    def fluxes(self, s: PatchStructure, q: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """int_K A grad(q_{T,k}) for every coarse K in the patch, shape (nK, 2 comps, 2 dirs)."""
        fe = s.fine_elements
        per_elem = kernels.element_fluxes(np.ascontiguousarray(q), s.cell_dofs,
                                          np.ascontiguousarray(self.fine.gradients[fe]),
                                          np.ascontiguousarray(weights[fe]))
        return kernels.group_sum(per_elem, self.ratio)

    def to_global(self, s: PatchStructure, q: np.ndarray) -> np.ndarray:
        out = np.zeros((self.fine.n_vertices,) + q.shape[1:])
        out[s.dofs] = q
        return out


_PATTERNS: Dict[int, FineStiffnessPattern] = {}


def _pattern_for(mesh) -> FineStiffnessPattern:
    key = "stiffness_pattern"
    if key not in mesh._cache:
        mesh._cache[key] = FineStiffnessPattern(mesh)
    return mesh._cache[key]


@dataclass
class CorrectorSet:
    """Element correctors q_{T,j} as fine nodal vectors, keyed by coarse element."""

    ell: int
    coarse_level: int
    fine_level: int
    sample_index: Optional[int]
    correctors: Dict[int, np.ndarray] = field(default_factory=dict)   # T -> (nv_fine, 2)

    def __getitem__(self, key):
        T, j = key
        return self.correctors[T][:, j]


def compute_correctors(hierarchy: MeshHierarchy, sample_tensors_fine, ell: int,
                       sample_index: Optional[int] = None,
                       level: Optional[CorrectorLevel] = None) -> CorrectorSet:
    """All element correctors for one coefficient given on the fine level."""
    lvl = level or CorrectorLevel(hierarchy, ell)
    A = as_tensor_field(sample_tensors_fine, lvl.fine.n_triangles)
    out = CorrectorSet(ell, lvl.coarse_level, lvl.fine_level, sample_index)
    if lvl.trivial:
        for T in range(lvl.coarse.n_triangles):
            out.correctors[T] = np.zeros((lvl.fine.n_vertices, 2))
        return out
    data = lvl.stiffness_values(A)
    W = lvl.element_weights(A)
    for T in range(lvl.coarse.n_triangles):
        s, q = lvl.solve_patch(T, A, data, W)
        out.correctors[T] = lvl.to_global(s, q)
    return out


def solve_element_corrector(hierarchy: MeshHierarchy, sample_tensors_fine, T: int, j: int,
                            ell: int) -> np.ndarray:
    """Fine nodal values of the single corrector q_{T,j}."""
    lvl = CorrectorLevel(hierarchy, ell)
    A = as_tensor_field(sample_tensors_fine, lvl.fine.n_triangles)
    if lvl.trivial:
        return np.zeros(lvl.fine.n_vertices)
    s, q = lvl.solve_patch(T, A)
    return lvl.to_global(s, q)[:, j]


def apply_corrector(correctors: CorrectorSet, hierarchy: MeshHierarchy, vH: np.ndarray) -> np.ndarray:
    """C v_H = sum_T sum_j (d_j v_H|_T) q_{T,j} as fine nodal values."""
    coarse = hierarchy.levels[correctors.coarse_level]
    grads = np.einsum("ta,tad->td", np.asarray(vH)[coarse.triangles], coarse.gradients)
    nv = hierarchy.levels[correctors.fine_level].n_vertices
    out = np.zeros(nv)
    for T in range(coarse.n_triangles):
        if T not in correctors.correctors:
            raise CorrectorError(f"missing corrector for element {T}")
        out += correctors.correctors[T] @ grads[T]
    return out
