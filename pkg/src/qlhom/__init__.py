"""Numerical stochastic homogenization with quasilocal effective models.

Element correctors are localized to patches of coarse elements and yield a
quasilocal effective tensor per random sample.  Monte Carlo averaging gives a
deterministic coarse model, which can be compressed to a piecewise constant
local tensor.  Estimators quantify the sample fluctuations and the jumps of
the local tensor.
"""
from .kernels import BACKEND
from .mesh import MeshHierarchy, TriMesh, build_initial_mesh, red_refine
from .random_field import FieldModel, draw_sample
from .upscaling import (LocalTensor, ModelInvalidError, QuasilocalTensor, SampleUpscaler,
                        compress_local, mc_average)

__version__ = "0.1.0"

__all__ = ["BACKEND", "FieldModel", "LocalTensor", "MeshHierarchy", "ModelInvalidError",
           "QuasilocalTensor", "SampleUpscaler", "TriMesh", "build_initial_mesh",
           "compress_local", "draw_sample", "mc_average", "red_refine"]
