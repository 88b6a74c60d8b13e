import itertools
import math

import numpy as np
import pytest

from qlhom.mesh import (MeshError, MeshHierarchy, TriMesh, build_initial_mesh, interior_faces,
                        patch, red_refine)


def brute_force_faces(mesh):
    """Edges shared by two triangles, by pairwise comparison."""
    faces = set()
    tris = [set(t) for t in mesh.triangles.tolist()]
    for a, b in itertools.combinations(range(len(tris)), 2):
        if len(tris[a] & tris[b]) == 2:
            faces.add((a, b))
    return faces


def test_initial_mesh_counts():
    m = build_initial_mesh()
    assert m.n_triangles == 32
    assert m.n_vertices == 25
    assert m.free_vertices.size == 9
    assert np.all(m.signed_areas > 0)
    assert math.isclose(m.areas.sum(), 1.0)


def test_interior_faces_match_brute_force():
    m = build_initial_mesh()
    faces = interior_faces(m)
    assert len(faces) == 40
    assert {(l, r) for _, l, r in faces} == brute_force_faces(m)
    for (v0, v1), l, r in faces:
        shared = set(m.triangles[l]) & set(m.triangles[r])
        assert shared == {v0, v1}


def test_every_face_has_one_or_two_triangles():
    m = red_refine(build_initial_mesh())
    counts = np.bincount(m.element_edges.ravel())
    assert set(counts.tolist()) <= {1, 2}
    boundary = counts == 1
    mids = m.vertices[m.edges[boundary]].mean(axis=1)
    on_bdry = np.isclose(mids, 0) | np.isclose(mids, 1)
    assert on_bdry.any(axis=1).all()


def test_single_triangle_has_no_interior_faces():
    m = TriMesh(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 1, 2]]))
    assert interior_faces(m) == []


def test_diagonal_pattern():
    """Lower-left and upper-right quadrants use the other diagonal than the rest."""
    m = build_initial_mesh()
    diag = {tuple(sorted(e)) for e in m.edges.tolist()}
    v = {tuple(np.round(p * 4).astype(int)): i for i, p in enumerate(m.vertices)}
    for i, j in itertools.product(range(4), range(4)):
        rising = (v[i, j], v[i + 1, j + 1])
        falling = (v[i + 1, j], v[i, j + 1])
        expect_rising = (i >= 2) != (j >= 2)
        assert (tuple(sorted(rising)) in diag) == expect_rising
        assert (tuple(sorted(falling)) in diag) != expect_rising


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_level_sizes(k):
    h = MeshHierarchy(0, k, k)
    m = h.levels[k]
    assert m.n_triangles == 32 * 4 ** k
    assert math.isclose(m.mesh_size, 2.0 ** (-2 - k) * math.sqrt(2))


def test_red_refine_children():
    m0 = build_initial_mesh()
    m1 = red_refine(m0)
    assert m1.n_triangles == 128
    assert np.allclose(m1.areas, np.repeat(m0.areas / 4, 4))
    assert np.array_equal(np.bincount(m1.parent_of), np.full(32, 4))
    assert np.array_equal(m1.parent_of, np.arange(128) // 4)
    # nesting: new vertices are old vertices or edge midpoints
    assert np.array_equal(m1.vertices[:m0.n_vertices], m0.vertices)
    mids = 0.5 * (m0.vertices[m0.edges[:, 0]] + m0.vertices[m0.edges[:, 1]])
    assert np.allclose(m1.vertices[m0.n_vertices:], mids)


def test_ancestor_contains_barycenter():
    h = MeshHierarchy(0, 1, 3)
    fine, coarse = h.levels[3], h.levels[1]
    anc = h.ancestor(np.arange(fine.n_triangles), 3, 1)
    bc = fine.vertices[fine.triangles].mean(axis=1)
    P = coarse.vertices[coarse.triangles[anc]]
    # barycentric coordinates of bc in the ancestor
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    lam = np.linalg.solve(T, (bc - P[:, 0])[..., None])[..., 0]
    assert np.all(lam >= -1e-12) and np.all(lam.sum(axis=1) <= 1 + 1e-12)
    # composed parent maps agree
    composed = h.levels[2].parent_of[fine.parent_of]
    assert np.array_equal(composed, anc)


def test_descendants_inverse_of_ancestor():
    h = MeshHierarchy(0, 2, 2)
    d = h.descendants([3, 7], 0, 2)
    assert d.size == 32
    assert set(h.ancestor(d, 2, 0).tolist()) == {3, 7}
    with pytest.raises(MeshError):
        h.descendants([0], 2, 0)


def test_patch_order_zero_and_exhaustion():
    m = red_refine(build_initial_mesh())
    assert patch(m, [5], 0).tolist() == [5]
    assert patch(m, [5], 50).size == m.n_triangles
    with pytest.raises(MeshError):
        patch(m, [], 1)


def test_patch_corner_brute_force():
    m = build_initial_mesh()
    corner = [t for t in range(m.n_triangles) if 0 in m.triangles[t]][0]
    expect = [t for t in range(m.n_triangles) if set(m.triangles[t]) & set(m.triangles[corner])]
    assert patch(m, [corner], 1).tolist() == sorted(expect)


def test_patch_recursion_matches_brute_force():
    m = red_refine(build_initial_mesh())
    rng = np.random.default_rng(0)
    for T in rng.choice(m.n_triangles, 5, replace=False):
        S = {int(T)}
        for order in range(1, 4):
            verts = set(m.triangles[list(S)].ravel())
            S = {t for t in range(m.n_triangles) if set(m.triangles[t]) & verts}
            assert patch(m, [T], order).tolist() == sorted(S)


# frozen: on levels 0..3, orders 1..4, the largest card N^m(T) / (2m+1)^2 seen is 1.494
PATCH_GROWTH_CONSTANT = 1.5


def test_patch_growth_bound():
    h = MeshHierarchy(0, 3, 3)
    worst = 0.0
    for m in h.levels:
        for T in range(0, m.n_triangles, max(1, m.n_triangles // 24)):
            for order in range(1, 5):
                worst = max(worst, patch(m, [T], order).size / (2 * order + 1) ** 2)
    assert worst <= PATCH_GROWTH_CONSTANT


def test_mesh_is_immutable():
    m = build_initial_mesh()
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
    with pytest.raises(Exception):
        m.level = 4


def test_clockwise_triangle_rejected():
    with pytest.raises(MeshError):
        TriMesh(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 2, 1]]))


def test_hierarchy_validation():
    with pytest.raises(MeshError):
        MeshHierarchy(2, 1, 3)
    h = MeshHierarchy(0, 2, 3)
    assert h.with_coarse_level(2).levels is h.levels
    with pytest.raises(MeshError):
        h.with_coarse_level(3)


def test_to_json_roundtrip():
    import json
    m = build_initial_mesh()
    d = json.loads(m.to_json())
    assert np.allclose(d["vertices"], m.vertices)
    assert d["triangles"] == m.triangles.tolist()
