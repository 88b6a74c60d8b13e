import numpy as np
import pytest

from qlhom.estimators import (EstimatorError, build_report, compute_eta, compute_gamma,
                              gamma_from_stats, max_jump)
from qlhom.mesh import MeshHierarchy, TriMesh
from qlhom.random_field import FieldModel
from qlhom.upscaling import LocalTensor, SampleUpscaler, mc_average


@pytest.fixture(scope="module")
def h():
    return MeshHierarchy(1, 2, 3)


def two_elements():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                   np.array([[0, 1, 2], [0, 2, 3]]))


def test_gamma_zero_for_deterministic_field(h):
    model = FieldModel(4.0, 4.0, 2, 0)
    mc = mc_average(model, h, 1, 3)
    g, gs, stats = compute_gamma(model, h, 1, 3, mc.quasilocal)
    assert g == 0.0 and gs == 0.0
    assert not stats.rms.any()


def test_gamma_zero_for_single_sample(h):
    model = FieldModel(1.0, 10.0, 2, 5)
    mc = mc_average(model, h, 1, 1)
    g, gs, _ = compute_gamma(model, h, 1, 1, mc.quasilocal)
    assert g == 0.0 and gs == 0.0


def test_gamma_positive_and_matches_direct_evaluation(h):
    model = FieldModel(1.0, 10.0, 2, 0)
    mc = mc_average(model, h, 1, 4, keep_samples=True)
    g, gs, stats = compute_gamma(model, h, 1, 4, mc.quasilocal)
    mean = mc.quasilocal
    areas = h.coarse.areas
    X2 = np.zeros(h.coarse.n_triangles)
    for b in mc.samples:
        for T in range(len(X2)):
            lo, hi = mean.indptr[T], mean.indptr[T + 1]
            d = max(np.linalg.norm(b[k] - mean.blocks[k]) for k in range(lo, hi))
            X2[T] += (areas[T] * d) ** 2 / len(mc.samples)
    denom = max(np.linalg.norm(B) for B in mean.blocks)
    assert g == pytest.approx(np.sqrt(X2.max()) / denom, rel=1e-12)
    assert np.allclose(stats.rms, np.sqrt(X2), rtol=1e-12)
    # all coarse elements of a uniform mesh share one area
    assert gs == pytest.approx(g / areas[0], rel=1e-12)
    assert g > 0


def test_gamma_invariant_under_scaling(h):
    base = FieldModel(1.0, 10.0, 2, 3)
    scaled = base.scaled(7.5)
    out = []
    for model in (base, scaled):
        mc = mc_average(model, h, 1, 3)
        out.append(compute_gamma(model, h, 1, 3, mc.quasilocal)[0])
    assert out[1] == pytest.approx(out[0], rel=1e-12)


def test_gamma_rejects_mismatched_parameters(h):
    model = FieldModel(1.0, 10.0, 2, 0)
    mc = mc_average(model, h, 1, 2, with_stats=False)
    with pytest.raises(EstimatorError):
        compute_gamma(model, h, 2, 2, mc.quasilocal)


def test_gamma_deterministic_repeat(h):
    model = FieldModel(1.0, 10.0, 2, 9)
    up = SampleUpscaler(h, 1)
    mc = mc_average(model, h, 1, 3, upscaler=up, with_stats=False)
    a = compute_gamma(model, h, 1, 3, mc.quasilocal, upscaler=up)
    b = compute_gamma(model, h, 1, 3, mc.quasilocal, upscaler=up)
    assert a[0] == b[0] and np.array_equal(a[2].mean_X2, b[2].mean_X2)


def test_stats_from_kept_blocks_match_second_pass(h):
    model = FieldModel(1.0, 10.0, 2, 2)
    kept = mc_average(model, h, 1, 3, keep_samples=True)
    g, _, stats = compute_gamma(model, h, 1, 3, kept.quasilocal)
    assert np.array_equal(stats.mean_X2, kept.stats.mean_X2)


def test_eta_two_element_formula():
    mesh = two_elements()
    J_mat = np.array([[0.3, -0.1], [0.2, 0.4]])
    T = np.stack([2.0 * np.eye(2), 2.0 * np.eye(2) + J_mat])
    loc = LocalTensor(0, T)
    J = np.linalg.norm(J_mat)
    H = np.sqrt(2.0)
    assert max_jump(loc, mesh) == pytest.approx(J, rel=1e-15)
    expect = J * (1 + J / 1.0) / (H * 5.5)
    assert compute_eta(loc, mesh, 1.0, 10.0) == pytest.approx(expect, rel=1e-14)
    assert compute_eta(loc, mesh, 1.0, 10.0, H=0.5) == pytest.approx(J * (1 + J) / (0.5 * 5.5), rel=1e-14)


def test_eta_constant_tensor_is_zero(h):
    loc = LocalTensor(1, np.broadcast_to(3.0 * np.eye(2), (h.coarse.n_triangles, 2, 2)).copy())
    assert compute_eta(loc, h.coarse, 1.0, 10.0) == 0.0


def test_eta_superlinear():
    mesh = two_elements()
    D = np.array([[0.5, 0.0], [0.1, -0.2]])
    e1 = compute_eta(LocalTensor(0, np.stack([np.eye(2), np.eye(2) + D])), mesh, 1.0, 10.0)
    e2 = compute_eta(LocalTensor(0, np.stack([np.eye(2), np.eye(2) + 2 * D])), mesh, 1.0, 10.0)
    assert e2 > 2 * e1


def test_eta_needs_interior_faces():
    mesh = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(EstimatorError):
        compute_eta(LocalTensor(0, np.eye(2)[None]), mesh, 1.0, 1.0)


def test_report_fields(h):
    model = FieldModel(1.0, 10.0, 2, 0)
    mc = mc_average(model, h, 1, 2)
    rep = build_report(mc.stats, mc.quasilocal, mc.local, h.coarse, 1.0, 10.0)
    g, gs, denom = gamma_from_stats(mc.stats, mc.quasilocal, h.coarse)
    assert (rep.gamma, rep.gamma_scaled, rep.denominator) == (g, gs, denom)
    d = rep.to_dict()
    assert set(d) >= {"gamma", "gamma_scaled", "eta", "admissibility", "per_element_X_rms"}
    assert d["admissibility"]["admissible"] is True
    assert np.all(np.isfinite(rep.per_element_X_rms)) and np.all(rep.per_element_X_rms >= 0)
