"""Quasilocal and local effective tensors, per sample and Monte Carlo averaged.

Block (T, K) of the quasilocal tensor couples the corrector source T with the
integration element K:

    (A_H|_{T,K})_{jk} = (delta_{TK} int_T A_jk - e_j . int_K A grad q_{T,k}) / (|T||K|).

Blocks are stored row-wise by T over the coarse patch N^l(T); the structure
only depends on the mesh and l, so averaging acts on the block arrays alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .correctors import CorrectorLevel, CorrectorSet
from .fem import as_tensor_field
from .mesh import MeshHierarchy, TriMesh, patch
from .random_field import FieldModel, draw_sample, restrict_to_fine


class ModelInvalidError(RuntimeError):
    """The effective model failed its coercivity or admissibility check."""


@dataclass
class QuasilocalTensor:
    """Sparse block map (T, K) -> 2x2, CSR-like over coarse elements T."""

    coarse_level: int
    ell: int
    indptr: np.ndarray
    indices: np.ndarray
    blocks: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.indptr.size - 1

    def row(self, T: int):
        sl = slice(self.indptr[T], self.indptr[T + 1])
        return self.indices[sl], self.blocks[sl]

    def block(self, T: int, K: int) -> np.ndarray:
        Ks, B = self.row(T)
        i = np.searchsorted(Ks, K)
        if i < Ks.size and Ks[i] == K:
            return B[i]
        return np.zeros((2, 2))

    def has_block(self, T: int, K: int) -> bool:
        Ks, _ = self.row(T)
        i = np.searchsorted(Ks, K)
        return bool(i < Ks.size and Ks[i] == K)

    def same_structure(self, other: "QuasilocalTensor") -> bool:
        return (self.coarse_level == other.coarse_level and self.ell == other.ell
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def with_blocks(self, blocks: np.ndarray) -> "QuasilocalTensor":
        return QuasilocalTensor(self.coarse_level, self.ell, self.indptr, self.indices, blocks)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_elements), np.diff(self.indptr))

    def to_dict(self) -> dict:
        T = self.row_ids()
        return {
            "kind": "quasilocal",
            "coarse_level": self.coarse_level,
            "ell": self.ell,
            "blocks": [{"T": int(t), "K": int(k), "A": b.tolist()}
                       for t, k, b in zip(T, self.indices, self.blocks)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuasilocalTensor":
        nT = 1 + max(b["T"] for b in d["blocks"])
        rows = sorted(d["blocks"], key=lambda b: (b["T"], b["K"]))
        T = np.array([b["T"] for b in rows])
        indptr = np.concatenate([[0], np.cumsum(np.bincount(T, minlength=nT))])
        return cls(d["coarse_level"], d["ell"], indptr,
                   np.array([b["K"] for b in rows], dtype=np.int64),
                   np.array([b["A"] for b in rows], dtype=float))


@dataclass
class LocalTensor:
    """One 2x2 matrix per coarse element."""

    coarse_level: int
    tensors: np.ndarray

    def admissible(self, alpha: float, beta: float) -> bool:
        """Symmetric-part eigenvalues within [alpha/2, 2 beta] on every element."""
        lo, hi = self.spectral_bounds()
        return bool(lo >= alpha / 2 and hi <= 2 * beta)

    def spectral_bounds(self):
        sym = 0.5 * (self.tensors + np.swapaxes(self.tensors, 1, 2))
        ev = np.linalg.eigvalsh(sym)
        return float(ev.min()), float(ev.max())

    def to_dict(self) -> dict:
        return {"kind": "local", "coarse_level": self.coarse_level,
                "tensors": self.tensors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalTensor":
        return cls(d["coarse_level"], np.array(d["tensors"], dtype=float))


def _structure(level: CorrectorLevel):
    nT = level.coarse.n_triangles
    rows = [level.coarse_patch(T) for T in range(nT)]
    indptr = np.concatenate([[0], np.cumsum([r.size for r in rows])]).astype(np.int64)
    return indptr, np.concatenate(rows).astype(np.int64)


def blocks_from_fluxes(T: int, Ks: np.ndarray, fluxes: np.ndarray, own_integral: np.ndarray,
                       areas: np.ndarray) -> np.ndarray:
    """Blocks of row T from int_K A grad q_{T,k} (shape (nK, 2, 2)) and int_T A."""
    B = -fluxes.copy()
    i = np.searchsorted(Ks, T)
    B[i] += own_integral
    return B / (areas[T] * areas[Ks])[:, None, None]


class SampleUpscaler:
    """Per-sample quasilocal tensors for one coarse level.

    Holds the coefficient-independent corrector structures, so repeated
    samples only pay for the patch factorizations.
    """

    def __init__(self, hierarchy: MeshHierarchy, ell: int, coarse_level: Optional[int] = None,
                 solver: str = "auto"):
        self.hierarchy = hierarchy
        self.level = CorrectorLevel(hierarchy, ell, coarse_level, solver=solver)
        self.coarse_level = self.level.coarse_level
        self.ell = int(ell)
        self.indptr, self.indices = _structure(self.level)

    def prepare(self) -> None:
        """Build all patch structures eagerly (before forking workers)."""
        if not self.level.trivial:
            for T in range(self.level.coarse.n_triangles):
                self.level.structure(T)

    def empty(self) -> QuasilocalTensor:
        return QuasilocalTensor(self.coarse_level, self.ell, self.indptr, self.indices,
                                np.zeros((self.indices.size, 2, 2)))

    def own_integrals(self, fine_tensors: np.ndarray) -> np.ndarray:
        """int_T A dx for every coarse T, shape (nT, 2, 2)."""
        W = self.level.element_weights(fine_tensors)
        return kernels.group_sum(np.ascontiguousarray(W), self.level.ratio)

    def compute(self, fine_tensors: np.ndarray, stiffness_data: Optional[np.ndarray] = None
                ) -> QuasilocalTensor:
        lvl = self.level
        A = as_tensor_field(fine_tensors, lvl.fine.n_triangles)
        own = self.own_integrals(A)
        areas = lvl.coarse.areas
        out = np.zeros((self.indices.size, 2, 2))
        if lvl.trivial:
            for T in range(lvl.coarse.n_triangles):
                Ks = self.indices[self.indptr[T]:self.indptr[T + 1]]
                out[self.indptr[T]:self.indptr[T + 1]] = blocks_from_fluxes(
                    T, Ks, np.zeros((Ks.size, 2, 2)), own[T], areas)
            return QuasilocalTensor(self.coarse_level, self.ell, self.indptr, self.indices, out)
        data = lvl.stiffness_values(A) if stiffness_data is None else stiffness_data
        W = lvl.element_weights(A)
        for T in range(lvl.coarse.n_triangles):
            s, q = lvl.solve_patch(T, A, data, W)
            F = lvl.fluxes(s, q, W)
            out[self.indptr[T]:self.indptr[T + 1]] = blocks_from_fluxes(
                T, s.coarse_elements, F, own[T], areas)
        return QuasilocalTensor(self.coarse_level, self.ell, self.indptr, self.indices, out)


def assemble_quasilocal(hierarchy: MeshHierarchy, sample_tensors_fine, correctors: CorrectorSet,
                        ell: Optional[int] = None) -> QuasilocalTensor:
    """Quasilocal tensor of one sample from precomputed global correctors."""
    if ell is not None and ell != correctors.ell:
        raise ValueError(f"correctors were computed with l={correctors.ell}, requested l={ell}")
    c, f = correctors.coarse_level, correctors.fine_level
    coarse, fine = hierarchy.levels[c], hierarchy.levels[f]
    ratio = 4 ** (f - c)
    A = as_tensor_field(sample_tensors_fine, fine.n_triangles)
    W = fine.areas[:, None, None] * A
    own = kernels.group_sum(np.ascontiguousarray(W), ratio)
    cell = fine.triangles
    indptr, idx, out = [0], [], []
    for T in range(coarse.n_triangles):
        Ks = patch(coarse, [T], correctors.ell)
        q = correctors.correctors[T]
        fe = hierarchy.descendants(Ks, c, f)
        F = kernels.element_fluxes(np.ascontiguousarray(q), cell[fe],
                                   np.ascontiguousarray(fine.gradients[fe]),
                                   np.ascontiguousarray(W[fe]))
        F = kernels.group_sum(F, ratio)
        out.append(blocks_from_fluxes(T, Ks, F, own[T], coarse.areas))
        idx.append(Ks)
        indptr.append(indptr[-1] + Ks.size)
    return QuasilocalTensor(c, correctors.ell, np.array(indptr, dtype=np.int64),
                            np.concatenate(idx).astype(np.int64), np.concatenate(out))


def coarse_gradient_matrix(mesh: TriMesh, weighted: bool = True) -> sp.csr_matrix:
    """(2 nT, nv): row 2T+d holds |T| d_d lambda_z|_T (or without |T|)."""
    nT = mesh.n_triangles
    G = mesh.gradients * (mesh.areas[:, None, None] if weighted else 1.0)  # (nT, 3, 2)
    rows = (2 * np.arange(nT)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.triangles[:, :, None], rows.shape)
    return sp.csr_matrix((G.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nT, mesh.n_vertices))


def assemble_bilinear(tensor: QuasilocalTensor, mesh: TriMesh, free: bool = True) -> sp.csr_matrix:
    """Matrix B with B[z, z'] = a(lambda_z, lambda_z').

    a(v, z) = sum_{T,K} |T||K| grad v|_K . (A_H|_{T,K} grad z|_T), which equals
    int grad v . A grad (1 - C) z for the corrector expansion C.
    """
    nT = tensor.n_elements
    T = tensor.row_ids()
    K = tensor.indices
    j, k = np.meshgrid(np.arange(2), np.arange(2), indexing="ij")
    # operator block (K, T) holds A_H|_{T,K}, the 2x2 block itself untransposed
    rows = (2 * K[:, None, None] + j[None]).ravel()
    cols = (2 * T[:, None, None] + k[None]).ravel()
    Q = sp.csr_matrix((tensor.blocks.ravel(), (rows, cols)), shape=(2 * nT, 2 * nT))
    G = coarse_gradient_matrix(mesh)
    B = (G.T @ Q @ G).tocsr()
    if free:
        fv = mesh.free_vertices
        B = B[fv][:, fv].tocsr()
    return B


def compress_local(tensor: QuasilocalTensor, mesh: TriMesh) -> LocalTensor:
    """A_H|_T = sum_K |K| A_H|_{T,K}."""
    weighted = tensor.blocks * mesh.areas[tensor.indices][:, None, None]
    T = tensor.row_ids()
    out = np.zeros((tensor.n_elements, 2, 2))
    np.add.at(out, T, weighted)
    return LocalTensor(tensor.coarse_level, out)


def coercivity_margin(B: sp.spmatrix) -> float:
    """Smallest eigenvalue of the symmetric part of a coarse operator."""
    S = 0.5 * (B + B.T)
    S = S.toarray() if sp.issparse(S) else np.asarray(S)
    if S.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(S)[0])


def check_coercive(tensor: QuasilocalTensor, mesh: TriMesh) -> float:
    margin = coercivity_margin(assemble_bilinear(tensor, mesh))
    if not margin > 0:
        raise ModelInvalidError(
            f"quasilocal operator not coercive on level {tensor.coarse_level}: "
            f"smallest symmetric eigenvalue {margin:.3e}")
    return margin


# --- Monte Carlo -----------------------------------------------------------

class BlockMean:
    """Shifted running mean in sample-index order.

    mean = x_0 + sum_i (x_i - x_0) / N, so identical samples reproduce x_0
    bit for bit.
    """

    def __init__(self):
        self.n = 0
        self.first = None
        self.acc = None

    def add(self, x: np.ndarray) -> None:
        if self.first is None:
            self.first = np.array(x, dtype=float, copy=True)
            self.acc = np.zeros_like(self.first)
        else:
            self.acc += x - self.first
        self.n += 1

    def mean(self) -> np.ndarray:
        if self.n == 0:
            raise ValueError("empty mean")
        return self.first + self.acc / self.n


def fluctuations(sample: QuasilocalTensor, mean: QuasilocalTensor, mesh: TriMesh) -> np.ndarray:
    """X(T) = max_K |T| ||A_H|_{T,K} - mean|_{T,K}||_F for one sample."""
    d = np.sqrt(np.sum((sample.blocks - mean.blocks) ** 2, axis=(1, 2)))
    X = np.zeros(sample.n_elements)
    np.maximum.at(X, sample.row_ids(), d)
    return X * mesh.areas


@dataclass
class FluctuationStats:
    """Per-element second moments of X(T) and their sample count."""

    mean_X2: np.ndarray
    n_samples: int

    @property
    def rms(self) -> np.ndarray:
        return np.sqrt(self.mean_X2)


@dataclass
class MCResult:
    quasilocal: QuasilocalTensor
    local: LocalTensor
    stats: Optional[FluctuationStats]
    n_samples: int
    model: FieldModel
    samples: Optional[List[np.ndarray]] = field(default=None, repr=False)


def per_sample_tensors(model: FieldModel, hierarchy: MeshHierarchy, upscaler: SampleUpscaler,
                       index: int) -> QuasilocalTensor:
    sample = draw_sample(model, hierarchy, index)
    return upscaler.compute(restrict_to_fine(sample, hierarchy))


def mc_average(model: FieldModel, hierarchy: MeshHierarchy, ell: int, N: int,
               upscaler: Optional[SampleUpscaler] = None, keep_samples: bool = False,
               with_stats: bool = True, mapper=map) -> MCResult:
    """Empirical means of the quasilocal and local tensors over samples 0..N-1.

    With ``with_stats`` a second pass recomputes every sample from its seed to
    accumulate X(T)^2; ``keep_samples`` retains the per-sample blocks instead.
    ``mapper`` may be a parallel map; reduction always runs in index order.
    """
    if N < 1:
        raise ValueError("need at least one sample")
    up = upscaler or SampleUpscaler(hierarchy, ell)
    if up.ell != ell:
        raise ValueError("upscaler built for a different oversampling parameter")
    acc = BlockMean()
    kept = [] if keep_samples else None
    for blocks in mapper(lambda i: per_sample_tensors(model, hierarchy, up, i).blocks, range(N)):
        acc.add(blocks)
        if kept is not None:
            kept.append(blocks)
    mean = up.empty().with_blocks(acc.mean())
    coarse = hierarchy.levels[up.coarse_level]
    local = compress_local(mean, coarse)
    stats = None
    if with_stats:
        source = kept if kept is not None else mapper(
            lambda i: per_sample_tensors(model, hierarchy, up, i).blocks, range(N))
        stats = fluctuation_stats(mean, source, coarse)
    return MCResult(mean, local, stats, N, model, kept)


def fluctuation_stats(mean: QuasilocalTensor, sample_blocks: Iterable[np.ndarray],
                      mesh: TriMesh) -> FluctuationStats:
    acc = None
    n = 0
    for b in sample_blocks:
        X = fluctuations(mean.with_blocks(b), mean, mesh)
        acc = X ** 2 if acc is None else acc + X ** 2
        n += 1
    return FluctuationStats(acc / n, n)


def tensors_to_json(quasilocal: QuasilocalTensor, local: LocalTensor) -> str:
    return json.dumps({"quasilocal": quasilocal.to_dict(), "local": local.to_dict()})
