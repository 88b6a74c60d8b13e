"""I.i.d. uniform scalar coefficients, piecewise constant on the eps mesh.

Every sample is a pure function of ``(master_seed, stream, sample_index)``;
within a sample the value of eps-cell ``c`` is the c-th draw of that stream.
Stream 0 feeds the Monte Carlo averages, stream 1 the evaluation samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshHierarchy

AVERAGING_STREAM = 0
EVALUATION_STREAM = 1


@dataclass(frozen=True)
class FieldModel:
    alpha: float = 1.0
    beta: float = 10.0
    eps_level: int = 3
    master_seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self):
        if not (0 < self.alpha <= self.beta):
            raise ValueError(f"need 0 < alpha <= beta, got alpha={self.alpha}, beta={self.beta}")
        if self.distribution != "uniform":
            raise ValueError(f"unsupported distribution {self.distribution!r}")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")

    @property
    def deterministic(self) -> bool:
        return self.alpha == self.beta

    def scaled(self, c: float) -> "FieldModel":
        return FieldModel(c * self.alpha, c * self.beta, self.eps_level, self.master_seed,
                          self.distribution)


@dataclass(frozen=True)
class CoefficientSample:
    """One realization: a symmetric 2x2 tensor per eps-level element."""

    tensors: np.ndarray
    sample_index: int
    eps_level: int
    stream: int = AVERAGING_STREAM

    @property
    def scalar(self) -> np.ndarray:
        return self.tensors[:, 0, 0]


def sample_rng(master_seed: int, sample_index: int, stream: int = AVERAGING_STREAM):
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stream),
                                                         int(sample_index)]))


def draw_sample(model: FieldModel, hierarchy: MeshHierarchy, sample_index: int,
                stream: int = AVERAGING_STREAM) -> CoefficientSample:
    if not 0 <= model.eps_level < len(hierarchy.levels):
        raise ValueError(f"eps level {model.eps_level} not in hierarchy")
    if sample_index < 0:
        raise ValueError("sample index must be nonnegative")
    n = hierarchy.levels[model.eps_level].n_triangles
    values = sample_rng(model.master_seed, sample_index, stream).uniform(model.alpha, model.beta, n)
    tensors = values[:, None, None] * np.eye(2)
    tensors.setflags(write=False)
    return CoefficientSample(tensors, int(sample_index), model.eps_level, stream)


def restrict_to_fine(sample: CoefficientSample, hierarchy: MeshHierarchy,
                     level: int = None) -> np.ndarray:
    """Per-element tensors on ``level`` (default: the fine level), copied from eps ancestors."""
    level = hierarchy.fine_level if level is None else level
    if level < sample.eps_level:
        raise ValueError("target level is coarser than the eps level")
    return np.repeat(sample.tensors, 4 ** (level - sample.eps_level), axis=0)


def is_admissible(tensors: np.ndarray, alpha: float, beta: float, rtol: float = 1e-12) -> bool:
    """Eigenvalues of the symmetric part lie in [alpha, beta] on every element."""
    sym = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    ev = np.linalg.eigvalsh(sym)
    tol = rtol * beta
    return bool(ev.min() >= alpha - tol and ev.max() <= beta + tol)


def sample_to_json(sample: CoefficientSample) -> dict:
    return {
        "sample_index": sample.sample_index,
        "stream": sample.stream,
        "eps_level": sample.eps_level,
        "tensors": sample.tensors.tolist(),
    }
