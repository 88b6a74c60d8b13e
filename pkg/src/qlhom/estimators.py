"""A-posteriori model error estimator (gamma) and jump indicator (eta)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import MeshHierarchy, TriMesh, interior_faces
from .random_field import FieldModel
from .upscaling import (FluctuationStats, LocalTensor, QuasilocalTensor, SampleUpscaler,
                        fluctuation_stats, per_sample_tensors)


class EstimatorError(ValueError):
    pass


@dataclass
class EstimatorReport:
    gamma: float
    gamma_scaled: float
    eta: float
    per_element_X_rms: np.ndarray
    denominator: float
    admissibility: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "gamma_scaled": self.gamma_scaled,
            "eta": self.eta,
            "denominator": self.denominator,
            "per_element_X_rms": self.per_element_X_rms.tolist(),
            "admissibility": self.admissibility,
        }


def gamma_from_stats(stats: FluctuationStats, averaged: QuasilocalTensor, mesh: TriMesh):
    """(gamma, gamma_scaled, denominator).

    ``gamma`` follows the definition verbatim: max_T rms X(T) over
    max_{T,K} |mean block|.  ``gamma_scaled`` weights the denominator by |T|
    like X(T) itself, which removes the mesh-size factor |T|.
    """
    norms = np.sqrt(np.sum(averaged.blocks ** 2, axis=(1, 2)))
    denom = float(norms.max())
    denom_scaled = float((norms * mesh.areas[averaged.row_ids()]).max())
    num = float(stats.rms.max())
    if denom == 0.0:
        raise EstimatorError("averaged tensor vanishes identically")
    return num / denom, num / denom_scaled, denom


def compute_gamma(model: FieldModel, hierarchy: MeshHierarchy, ell: int, N: int,
                  averaged: QuasilocalTensor, upscaler: Optional[SampleUpscaler] = None,
                  mapper=map):
    """Second pass: regenerate samples 0..N-1, accumulate E[X(T)^2], normalize."""
    if averaged.ell != ell or averaged.coarse_level != hierarchy.coarse_level:
        raise EstimatorError("averaged tensor was computed for different parameters")
    up = upscaler or SampleUpscaler(hierarchy, ell)
    blocks = mapper(lambda i: per_sample_tensors(model, hierarchy, up, i).blocks, range(N))
    stats = fluctuation_stats(averaged, blocks, hierarchy.coarse)
    if stats.n_samples != N:
        raise EstimatorError("sample count mismatch with the averaging pass")
    g, gs, _ = gamma_from_stats(stats, averaged, hierarchy.coarse)
    return g, gs, stats


def max_jump(local: LocalTensor, mesh: TriMesh) -> float:
    faces = interior_faces(mesh)
    if not faces:
        raise EstimatorError("mesh has no interior faces")
    left = np.array([f[1] for f in faces])
    right = np.array([f[2] for f in faces])
    d = local.tensors[left] - local.tensors[right]
    return float(np.sqrt(np.sum(d ** 2, axis=(1, 2))).max())


def compute_eta(local: LocalTensor, mesh: TriMesh, alpha: float, beta: float,
                H: Optional[float] = None) -> float:
    """H^{-1} J (1 + J/alpha) / ((alpha + beta)/2) with J the largest Frobenius face jump."""
    H = mesh.mesh_size if H is None else H
    J = max_jump(local, mesh)
    return J * (1.0 + J / alpha) / (H * 0.5 * (alpha + beta))


def build_report(stats: FluctuationStats, averaged: QuasilocalTensor, local: LocalTensor,
                 mesh: TriMesh, alpha: float, beta: float) -> EstimatorReport:
    g, gs, denom = gamma_from_stats(stats, averaged, mesh)
    lo, hi = local.spectral_bounds()
    adm = {"sym_eig_min": lo, "sym_eig_max": hi, "lower": alpha / 2, "upper": 2 * beta,
           "admissible": bool(lo >= alpha / 2 and hi <= 2 * beta)}
    return EstimatorReport(g, gs, compute_eta(local, mesh, alpha, beta), stats.rms, denom, adm)
