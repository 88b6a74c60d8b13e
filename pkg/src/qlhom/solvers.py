"""Reference, quasilocal and local solutions, and the empirical error norms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fem import (FeFunction, assemble_load, assemble_stiffness, extend_free, mass_matrix,
                  prolongation_matrix, solve_dirichlet)
from .mesh import MeshHierarchy, TriMesh
from .random_field import CoefficientSample, restrict_to_fine
from .upscaling import (LocalTensor, ModelInvalidError, QuasilocalTensor, assemble_bilinear,
                        coercivity_margin)


def solve_reference(hierarchy: MeshHierarchy, sample: CoefficientSample, f=1.0,
                    tol: float = 1e-10) -> FeFunction:
    fine = hierarchy.fine
    A = restrict_to_fine(sample, hierarchy)
    K = assemble_stiffness(fine, A)
    x = solve_dirichlet(K, assemble_load(fine, f), tol)
    return FeFunction(hierarchy.fine_level, extend_free(fine, x))


def solve_quasilocal(tensor: QuasilocalTensor, mesh: TriMesh, f=1.0, tol: float = 1e-10,
                     check: bool = True) -> FeFunction:
    """u_H with a(u_H, v_H) = (f, v_H) for all v_H (nonsymmetric system)."""
    B = assemble_bilinear(tensor, mesh)
    if check:
        margin = coercivity_margin(B)
        if not margin > 0:
            raise ModelInvalidError(
                f"quasilocal operator indefinite (smallest symmetric eigenvalue {margin:.3e})")
    # row z of the system tests with lambda_z: sum_z' u_z' a(lambda_z', lambda_z)
    x = solve_dirichlet(B.T.tocsc(), assemble_load(mesh, f), tol)
    return FeFunction(tensor.coarse_level, extend_free(mesh, x))


def solve_local(tensor: LocalTensor, mesh: TriMesh, f=1.0, alpha: Optional[float] = None,
                beta: Optional[float] = None, tol: float = 1e-10) -> FeFunction:
    """Standard P1 solve with the piecewise-constant (possibly nonsymmetric) tensor."""
    if alpha is not None and beta is not None and not tensor.admissible(alpha, beta):
        lo, hi = tensor.spectral_bounds()
        raise ModelInvalidError(
            f"local tensor outside [alpha/2, 2 beta] = [{alpha / 2}, {2 * beta}]: "
            f"symmetric eigenvalues in [{lo:.4g}, {hi:.4g}]")
    K = assemble_stiffness(mesh, tensor.tensors, symmetric=False)
    x = solve_dirichlet(K.T.tocsc(), assemble_load(mesh, f), tol)
    return FeFunction(tensor.coarse_level, extend_free(mesh, x))


@dataclass
class ErrorRow:
    err_ql: float          # |||u_h - u_H|||
    err_loc: float         # |||u_h - u~_H|||
    experr_ql: float       # ||mean(u_h) - u_H||
    experr_loc: float      # ||mean(u_h) - u~_H||
    ref_norm: float        # |||u_h|||
    n_eval: int

    @property
    def relative(self) -> dict:
        r = self.ref_norm
        return {"rel_err_ql": self.err_ql / r, "rel_err_loc": self.err_loc / r,
                "rel_experr_ql": self.experr_ql / r, "rel_experr_loc": self.experr_loc / r}


def error_norms(references: Sequence[np.ndarray], u_ql: FeFunction, u_loc: FeFunction,
                hierarchy: MeshHierarchy) -> ErrorRow:
    """Empirical L2(Omega; L2(D)) errors against fine reference samples.

    ``references`` are fine-level nodal vectors; coarse solutions are
    prolongated to the fine level, never the other way round.
    """
    n = len(references)
    if n == 0:
        raise ValueError("need at least one evaluation sample")
    fine = hierarchy.fine
    M = mass_matrix(fine)
    pq = prolongation_matrix(hierarchy, u_ql.mesh_level, hierarchy.fine_level) @ u_ql.values
    pl = prolongation_matrix(hierarchy, u_loc.mesh_level, hierarchy.fine_level) @ u_loc.values

    def sq(d):
        return max(float(d @ (M @ d)), 0.0)

    s_ql = s_loc = s_ref = 0.0
    mean = np.zeros(fine.n_vertices)
    for r in references:
        s_ql += sq(r - pq)
        s_loc += sq(r - pl)
        s_ref += sq(r)
        mean += r
    mean /= n
    return ErrorRow(np.sqrt(s_ql / n), np.sqrt(s_loc / n), np.sqrt(sq(mean - pq)),
                    np.sqrt(sq(mean - pl)), np.sqrt(s_ref / n), n)
