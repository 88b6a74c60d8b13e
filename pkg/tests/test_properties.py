"""Randomized properties of the building blocks."""
import importlib

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qlhom import _kernels_py as py
from qlhom import kernels
from qlhom.estimators import compute_eta
from qlhom.mesh import MeshHierarchy, patch
from qlhom.upscaling import BlockMean, LocalTensor

H = MeshHierarchy(0, 2, 2)
BACKENDS = [py] + ([importlib.import_module("qlhom._kernels")] if kernels.BACKEND == "cython" else [])

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(lvl=st.integers(0, 2), T=st.integers(0, 31), m=st.integers(0, 3))
def test_patches_nest(lvl, T, m):
    mesh = H.levels[lvl]
    T = T % mesh.n_triangles
    inner, outer = patch(mesh, [T], m), patch(mesh, [T], m + 1)
    assert T in inner
    assert np.isin(inner, outer).all()
    # growing the (m)-patch by one layer is the (m+1)-patch
    assert np.array_equal(patch(mesh, inner, 1), outer)


@settings(max_examples=25, deadline=None)
@given(tensors=arrays(float, (H.levels[1].n_triangles, 2, 2), elements=finite))
def test_local_stiffness_annihilates_constants(tensors):
    mesh = H.levels[1]
    for mod in BACKENDS:
        K = mod.local_stiffness(mesh.gradients, mesh.areas, np.ascontiguousarray(tensors))
        scale = 1.0 + np.abs(K).max()
        assert np.abs(K.sum(axis=2)).max() <= 1e-12 * scale
        assert np.abs(K.sum(axis=1)).max() <= 1e-12 * scale


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40), density=st.floats(0.02, 0.3))
def test_sparse_cholesky_solves(seed, n, density):
    rng = np.random.default_rng(seed)
    M = sp.random(n, n, density=density, random_state=rng)
    A = (M @ M.T + n * sp.identity(n)).tocsc()
    A.sort_indices()
    Ap, Ai = A.indptr.astype(np.intc), A.indices.astype(np.intc)
    B0 = rng.standard_normal((n, 3))
    ref = np.linalg.solve(A.toarray(), B0)
    for mod in BACKENDS:
        Lp, parent = mod.chol_symbolic(Ap, Ai)
        Li, Lx = mod.chol_numeric(Ap, Ai, A.data.astype(float), Lp, parent)
        X = B0.copy()
        mod.chol_forward(Lp, Li, Lx, X)
        mod.chol_backward(Lp, Li, Lx, X)
        assert np.allclose(X, ref, rtol=1e-9, atol=1e-12)


def test_cholesky_rejects_indefinite():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    Ap, Ai = A.indptr.astype(np.intc), A.indices.astype(np.intc)
    for mod in BACKENDS:
        Lp, parent = mod.chol_symbolic(Ap, Ai)
        with pytest.raises(ValueError):
            mod.chol_numeric(Ap, Ai, A.data, Lp, parent)


@settings(max_examples=40, deadline=None)
@given(xs=st.lists(arrays(float, (3, 2, 2), elements=finite), min_size=1, max_size=8))
def test_block_mean(xs):
    m = BlockMean()
    for x in xs:
        m.add(x)
    assert np.allclose(m.mean(), np.mean(xs, axis=0), atol=1e-12)
    same = BlockMean()
    for _ in xs:
        same.add(xs[0])
    assert np.array_equal(same.mean(), xs[0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1.01, 4.0))
def test_eta_grows_with_jumps(seed, c):
    mesh = H.levels[1]
    rng = np.random.default_rng(seed)
    base = 2.0 * np.eye(2) + 0.1 * rng.standard_normal((mesh.n_triangles, 2, 2))
    mean = base.mean(axis=0)
    e1 = compute_eta(LocalTensor(1, base), mesh, 1.0, 10.0)
    e2 = compute_eta(LocalTensor(1, mean + c * (base - mean)), mesh, 1.0, 10.0)
    assert e2 > c * e1 * (1 - 1e-12)
