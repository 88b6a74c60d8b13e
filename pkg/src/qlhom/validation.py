"""Toy-scale oracle suite behind ``qlhom validate``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import kernels
from .correctors import compute_correctors
from .fem import assemble_full, mass_matrix, prolongation_matrix, solve_poisson
from .mesh import MeshHierarchy, patch
from .quasi_interp import InterpolationOperator
from .random_field import FieldModel, draw_sample, restrict_to_fine
from .solvers import solve_quasilocal
from .upscaling import SampleUpscaler, assemble_bilinear, assemble_quasilocal, compress_local


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}, {self.seconds:.1f}s)"


def _sample(h: MeshHierarchy, idx: int = 0, seed: int = 0) -> np.ndarray:
    return restrict_to_fine(draw_sample(FieldModel(1.0, 10.0, h.eps_level, seed), h, idx), h)


def identity_defect(coarse=1, eps=2, fine=3, ell=1, pairs=20, seed=0, corrupt=0.0) -> float:
    """max over random pairs of |a(v,z) - int grad v . A grad (1 - C) z| / (1 + |a(v,z)|)."""
    h = MeshHierarchy(coarse, eps, fine)
    A = _sample(h, 0, seed)
    cs = compute_correctors(h, A, ell)
    Q = assemble_quasilocal(h, A, cs, ell)
    B = assemble_bilinear(Q, h.coarse, free=False)
    rng = np.random.default_rng(seed + 1)
    if corrupt:
        for T in cs.correctors:
            q = cs.correctors[T]
            q[q != 0] += corrupt * rng.standard_normal(np.count_nonzero(q))
    Kf = assemble_full(h.fine, A)
    P = prolongation_matrix(h, coarse, fine)
    coarse_mesh = h.coarse
    grads_of = lambda v: np.einsum("ta,tad->td", v[coarse_mesh.triangles], coarse_mesh.gradients)
    worst = 0.0
    for _ in range(pairs):
        v = np.zeros(coarse_mesh.n_vertices)
        z = np.zeros(coarse_mesh.n_vertices)
        fv = coarse_mesh.free_vertices
        v[fv] = rng.standard_normal(fv.size)
        z[fv] = rng.standard_normal(fv.size)
        a = v @ (B @ z)
        Cz = sum(cs.correctors[T] @ g for T, g in enumerate(grads_of(z)))
        rhs = (P @ v) @ (Kf @ (P @ z - Cz))
        worst = max(worst, abs(a - rhs) / (1.0 + abs(a)))
    return worst


def collapse_defect(level=2, samples=3, seed=0) -> float:
    """Coarse = eps = fine: u_H against P1 FEM with the element-averaged coefficient."""
    h = MeshHierarchy(level, level, level)
    worst = 0.0
    M = mass_matrix(h.fine)
    for i in range(samples):
        A = _sample(h, i, seed)
        Q = SampleUpscaler(h, 1).compute(A)
        uH = solve_quasilocal(Q, h.coarse).values
        ref = solve_poisson(h.fine, A)
        d = uH - ref
        worst = max(worst, float(np.sqrt(max(d @ (M @ d), 0.0))))
    return worst


def constant_defect(levels=(0, 1), ells=(0, 1, 2), values=(1.0, 10.0), fine=3) -> float:
    worst = 0.0
    for c in levels:
        h = MeshHierarchy(c, fine, fine)
        for ell in ells:
            up = SampleUpscaler(h, ell)
            for val in values:
                A = np.broadcast_to(val * np.eye(2), (h.fine.n_triangles, 2, 2)).copy()
                loc = compress_local(up.compute(A), h.coarse).tensors
                worst = max(worst, float(np.sqrt(((loc - val * np.eye(2)) ** 2).sum((1, 2))).max()))
    return worst


def sparsity_violations(coarse=1, eps=2, fine=3, ells=(0, 1), seed=0) -> float:
    """Number of (T, K) with K outside N^l(T) carrying a nonzero flux or a stored block."""
    h = MeshHierarchy(coarse, eps, fine)
    A = _sample(h, 0, seed)
    W = h.fine.areas[:, None, None] * A
    ratio = 4 ** (fine - coarse)
    bad = 0
    for ell in ells:
        cs = compute_correctors(h, A, ell)
        Q = SampleUpscaler(h, ell).compute(A)
        for T in range(h.coarse.n_triangles):
            allowed = np.zeros(h.coarse.n_triangles, dtype=bool)
            allowed[patch(h.coarse, [T], ell)] = True
            stored = Q.indices[Q.indptr[T]:Q.indptr[T + 1]]
            bad += int((~allowed[stored]).sum())
            F = kernels.element_fluxes(np.ascontiguousarray(cs.correctors[T]), h.fine.triangles,
                                       h.fine.gradients, np.ascontiguousarray(W))
            F = kernels.group_sum(F, ratio)
            bad += int(np.count_nonzero(F[~allowed]))
    return float(bad)


def kernel_defect(coarse=1, eps=2, fine=3, ell=1, seed=0) -> float:
    """max |I_H q_{T,j}| relative to max |q_{T,j}|."""
    h = MeshHierarchy(coarse, eps, fine)
    A = _sample(h, 0, seed)
    cs = compute_correctors(h, A, ell)
    IH = InterpolationOperator.build(h, coarse, fine)
    worst = 0.0
    for q in cs.correctors.values():
        scale = max(float(np.abs(q).max()), 1e-300)
        worst = max(worst, float(np.abs(IH.matrix @ q).max()) / scale)
    return worst


def solver_agreement(coarse=1, eps=2, fine=4, ell=2, seed=0) -> float:
    """Relative difference between Cholesky and SuperLU tensors (0 without the extension)."""
    if kernels.BACKEND != "cython":
        return 0.0
    h = MeshHierarchy(coarse, eps, fine)
    A = _sample(h, 0, seed)
    out = []
    for solver in ("cholesky", "superlu"):
        out.append(SampleUpscaler(h, ell, solver=solver).compute(A).blocks)
    return float(np.abs(out[0] - out[1]).max() / np.abs(out[1]).max())


CHECKS: List[tuple] = [
    ("operator identity", identity_defect, 1e-9),
    ("degenerate collapse", collapse_defect, 1e-10),
    ("constant coefficient exactness", constant_defect, 1e-10),
    ("structural sparsity", sparsity_violations, 0.0),
    ("kernel constraint", kernel_defect, 1e-10),
    ("patch solver agreement", solver_agreement, 1e-10),
]


def run_checks(corrupt: float = 0.0, report: Callable[[str], None] = print) -> List[CheckResult]:
    results = []
    for name, fn, tol in CHECKS:
        t0 = time.perf_counter()
        value = fn(corrupt=corrupt) if fn is identity_defect else fn()
        r = CheckResult(name, bool(value <= tol), value, tol, time.perf_counter() - t0)
        report(r.line())
        results.append(r)
    return results
