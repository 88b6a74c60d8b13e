"""P1 Lagrange finite elements with homogeneous Dirichlet conditions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .mesh import MeshHierarchy, TriMesh


class SolverError(RuntimeError):
    """Linear solve failed; ``info`` carries diagnostics."""

    def __init__(self, msg: str, **info):
        super().__init__(msg + (f" {info}" if info else ""))
        self.info = info


@dataclass
class FeFunction:
    """Nodal values of a P1 function on ``hierarchy.levels[mesh_level]``."""

    mesh_level: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


def as_tensor_field(coef, n: int) -> np.ndarray:
    """Broadcast scalars / per-element scalars / per-element 2x2 tensors to (n, 2, 2)."""
    c = np.asarray(coef, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(2), (n, 2, 2))
    if c.ndim == 1:
        return c[:, None, None] * np.eye(2)
    if c.ndim == 2 and c.shape == (2, 2):
        return np.broadcast_to(c, (n, 2, 2))
    if c.shape != (n, 2, 2):
        raise ValueError(f"coefficient of shape {c.shape} does not fit {n} elements")
    return c


def _check_symmetric(tensors: np.ndarray) -> None:
    if not np.allclose(tensors, np.swapaxes(tensors, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(tensors).max())):
        raise ValueError("diffusion tensor must be symmetric")


def assemble_full(mesh: TriMesh, tensors, symmetric: bool = True) -> sp.csr_matrix:
    """Stiffness matrix over all vertices, K[z,z'] = sum_T |T| grad_z . (A_T grad_z')."""
    A = as_tensor_field(tensors, mesh.n_triangles)
    if symmetric:
        _check_symmetric(A)
    local = kernels.local_stiffness(mesh.gradients, mesh.areas, np.ascontiguousarray(A))
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: TriMesh, tensors, symmetric: bool = True) -> sp.csr_matrix:
    """Stiffness matrix restricted to the free vertices.

    Pass ``symmetric=False`` for the nonsymmetric effective tensors.
    """
    free = mesh.free_vertices
    return assemble_full(mesh, tensors, symmetric)[free][:, free].tocsr()


def mass_matrix(mesh: TriMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix over all vertices."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * base
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_load(mesh: TriMesh, f: Union[float, Callable, None] = 1.0) -> np.ndarray:
    """Load vector (f, lambda_z) over free vertices.

    ``f`` is a constant or a callable ``f(x, y)``; callables are interpolated
    nodally, which is exact for piecewise-affine ``f``.
    """
    if f is None:
        f = 0.0
    if callable(f):
        fv = np.asarray(f(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)
        fv = np.broadcast_to(fv, (mesh.n_vertices,))
        full = mass_matrix(mesh) @ fv
    else:
        full = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                           minlength=mesh.n_vertices) * float(f)
    return full[mesh.free_vertices]


def solve_dirichlet(K: sp.spmatrix, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Direct sparse solve, checked against ``tol``; GMRES/CG fallback."""
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    K = sp.csc_matrix(K)
    try:
        # symmetric mode keeps diagonal pivots and with them the fill-reducing order
        x = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True}).solve(b)
    except RuntimeError as exc:  # exactly singular
        x = None
        err = str(exc)
    else:
        r = np.linalg.norm(K @ x - b)
        if np.isfinite(r) and r <= tol * bnorm:
            return x
        err = f"direct residual {r:.3e}"
    sym = abs(K - K.T).max() <= 1e-14 * abs(K).max()
    method = spla.cg if sym else spla.gmres
    x0 = x if x is not None and np.all(np.isfinite(x)) else None
    x, info = method(K, b, x0=x0, rtol=tol, atol=0.0, maxiter=10 * K.shape[0])
    r = np.linalg.norm(K @ x - b)
    if info != 0 or not r <= tol * bnorm:
        raise SolverError("linear solve did not converge",
                          direct=err, iterative_info=info, residual=r, rhs_norm=bnorm)
    return x


def extend_free(mesh: TriMesh, x_free: np.ndarray) -> np.ndarray:
    """Nodal vector with zeros on the boundary."""
    out = np.zeros(mesh.n_vertices)
    out[mesh.free_vertices] = x_free
    return out


def solve_poisson(mesh: TriMesh, tensors, f=1.0, symmetric: bool = True) -> np.ndarray:
    """Nodal values (boundary included) of the P1 solution for coefficient ``tensors``."""
    K = assemble_stiffness(mesh, tensors, symmetric=symmetric)
    return extend_free(mesh, solve_dirichlet(K, assemble_load(mesh, f)))


def prolongation_matrix(hierarchy: MeshHierarchy, from_level: int, to_level: int) -> sp.csr_matrix:
    """Nodal interpolation from ``from_level`` to ``to_level`` (nested meshes)."""
    if to_level < from_level:
        raise ValueError("cannot prolongate to a coarser level")
    key = ("prol", from_level, to_level)
    cache = hierarchy.levels[to_level]._cache
    if key in cache:
        return cache[key]
    P = sp.identity(hierarchy.levels[from_level].n_vertices, format="csr")
    for k in range(from_level, to_level):
        m = hierarchy.levels[k]
        nv, ne = m.n_vertices, len(m.edges)
        rows = np.concatenate([np.arange(nv), nv + np.repeat(np.arange(ne), 2)])
        cols = np.concatenate([np.arange(nv), m.edges.ravel()])
        vals = np.concatenate([np.ones(nv), np.full(2 * ne, 0.5)])
        step = sp.csr_matrix((vals, (rows, cols)), shape=(nv + ne, nv))
        P = step @ P
    P = P.tocsr()
    cache[key] = P
    return P


def prolongate(v: FeFunction, hierarchy: MeshHierarchy, to_level: int) -> FeFunction:
    if to_level < v.mesh_level:
        raise ValueError(f"cannot prolongate from level {v.mesh_level} to {to_level}")
    P = prolongation_matrix(hierarchy, v.mesh_level, to_level)
    return FeFunction(to_level, P @ v.values)


def _common(u: FeFunction, v: FeFunction, hierarchy: MeshHierarchy):
    lvl = max(u.mesh_level, v.mesh_level)
    return lvl, prolongate(u, hierarchy, lvl).values - prolongate(v, hierarchy, lvl).values


def l2_distance(u: FeFunction, v: FeFunction, hierarchy: MeshHierarchy) -> float:
    lvl, d = _common(u, v, hierarchy)
    M = mass_matrix(hierarchy.levels[lvl])
    return float(np.sqrt(max(d @ (M @ d), 0.0)))


def h1_semidistance(u: FeFunction, v: FeFunction, hierarchy: MeshHierarchy) -> float:
    lvl, d = _common(u, v, hierarchy)
    K = assemble_full(hierarchy.levels[lvl], 1.0)
    return float(np.sqrt(max(d @ (K @ d), 0.0)))


def l2_norm(mesh: TriMesh, values: np.ndarray, M: Optional[sp.spmatrix] = None) -> float:
    M = mass_matrix(mesh) if M is None else M
    return float(np.sqrt(max(values @ (M @ values), 0.0)))
