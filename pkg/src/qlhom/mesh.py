"""Triangular meshes on the unit square and their red-refinement hierarchy.

Element numbering is chosen so that red refinement maps parent ``p`` to
children ``4p, 4p+1, 4p+2, 4p+3``.  Ancestors at any coarser level are
therefore an integer division away, which the rest of the package relies on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable conforming triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    level : refinement level (0 for the initial mesh)
    parent_of : (nt,) int array into the previous level, or None at level 0
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: int = 0
    parent_of: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2 or t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("vertices must be (nv, 2) and triangles (nt, 3)")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.parent_of is not None:
            p = np.asarray(self.parent_of, dtype=np.int64)
            p.setflags(write=False)
            object.__setattr__(self, "parent_of", p)
        if np.any(self.signed_areas <= 0):
            raise MeshError("triangles must be counter-clockwise with positive area")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def signed_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.vertices[self.triangles]
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            a = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            a.setflags(write=False)
            self._cache["areas"] = a
        return self._cache["areas"]

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape (nt, 3, 2)."""
        if "grads" not in self._cache:
            p = self.vertices[self.triangles]
            # rotated opposite edges over twice the area
            e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
            g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * self.signed_areas)[:, None, None]
            g.setflags(write=False)
            self._cache["grads"] = g
        return self._cache["grads"]

    @property
    def mesh_size(self) -> float:
        """Largest element diameter."""
        p = self.vertices[self.triangles]
        d = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(d.max())

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (ne, 2)."""
        self._build_edges()
        return self._cache["edges"]

    @property
    def element_edges(self) -> np.ndarray:
        """(nt, 3) indices into ``edges`` of the local edges (v0,v1), (v1,v2), (v2,v0)."""
        self._build_edges()
        return self._cache["element_edges"]

    def _build_edges(self) -> None:
        if "edges" in self._cache:
            return
        t = self.triangles
        local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        local = np.sort(local, axis=1)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        self._cache["edges"] = edges
        self._cache["element_edges"] = inverse.reshape(-1, 3)

    @property
    def boundary_vertex_flags(self) -> np.ndarray:
        if "bflags" not in self._cache:
            ee = self.element_edges.ravel()
            count = np.bincount(ee, minlength=len(self.edges))
            flags = np.zeros(self.n_vertices, dtype=bool)
            flags[self.edges[count == 1].ravel()] = True
            flags.setflags(write=False)
            self._cache["bflags"] = flags
        return self._cache["bflags"]

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex_flags)

    @property
    def incidence(self) -> sp.csr_matrix:
        """Element-vertex incidence matrix (nt, nv) with unit entries."""
        if "inc" not in self._cache:
            nt = self.n_triangles
            rows = np.repeat(np.arange(nt), 3)
            m = sp.csr_matrix((np.ones(3 * nt), (rows, self.triangles.ravel())),
                              shape=(nt, self.n_vertices))
            self._cache["inc"] = m
        return self._cache["inc"]

    def interior_faces(self) -> list[tuple[tuple[int, int], int, int]]:
        return interior_faces(self)

    def to_json(self) -> str:
        return json.dumps({
            "level": self.level,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
        })


def build_initial_mesh() -> TriMesh:
    """4x4 grid of squares on (0,1)^2, diagonals forming the nested diamonds.

    Squares in the lower-left and upper-right quadrants are cut along the
    anti-diagonal, the others along the main diagonal.
    """
    n = 4
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i >= n // 2) != (j >= n // 2):
                # diagonal from (i, j) to (i+1, j+1)
                tris += [(a, b, c), (a, c, d)]
            else:
                # diagonal from (i+1, j) to (i, j+1)
                tris += [(a, b, d), (b, c, d)]
    return TriMesh(vertices, np.array(tris), level=0)


def red_refine(mesh: TriMesh) -> TriMesh:
    """Split each triangle into four congruent children through edge midpoints.

    Old vertices keep their indices; midpoints are appended in edge order.
    """
    nv = mesh.n_vertices
    edges = mesh.edges
    ee = mesh.element_edges
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])

    t = mesh.triangles
    m01, m12, m20 = (nv + ee[:, 0]), (nv + ee[:, 1]), (nv + ee[:, 2])
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return TriMesh(vertices, children, level=mesh.level + 1, parent_of=parent)


def interior_faces(mesh: TriMesh) -> list[tuple[tuple[int, int], int, int]]:
    """Interior edges as ``((v0, v1), left, right)`` with ``left < right``."""
    ee = mesh.element_edges.ravel()
    owner = np.repeat(np.arange(mesh.n_triangles), 3)
    order = np.argsort(ee, kind="stable")
    ee_s, own_s = ee[order], owner[order]
    same = np.flatnonzero(ee_s[1:] == ee_s[:-1])
    out = []
    for k in same:
        e = mesh.edges[ee_s[k]]
        out.append(((int(e[0]), int(e[1])), int(own_s[k]), int(own_s[k + 1])))
    return out


def patch(mesh: TriMesh, seed: Iterable[int], m: int) -> np.ndarray:
    """Element indices of the m-th order patch around ``seed`` (sorted).

    Contact through a single shared vertex counts.  ``m = 0`` returns the seed.
    """
    seed = np.unique(np.asarray(list(seed) if not isinstance(seed, np.ndarray) else seed,
                                dtype=np.int64))
    if seed.size == 0:
        raise MeshError("patch seed must be nonempty")
    if m < 0:
        raise MeshError("patch order must be nonnegative")
    inc = mesh.incidence
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[seed] = True
    for _ in range(m):
        touched = inc.T @ mask.astype(float) > 0
        new = inc @ touched.astype(float) > 0
        if np.array_equal(new, mask):
            break
        mask = new
    return np.flatnonzero(mask)


class MeshHierarchy:
    """Nested sequence of red refinements of one initial mesh.

    ``coarse_level <= eps_level <= fine_level`` index into ``levels``.
    """

    def __init__(self, coarse_level: int, eps_level: int, fine_level: int,
                 base: Optional[TriMesh] = None):
        if not 0 <= coarse_level <= eps_level <= fine_level:
            raise MeshError(
                f"need 0 <= coarse <= eps <= fine, got {coarse_level}, {eps_level}, {fine_level}")
        self.coarse_level = coarse_level
        self.eps_level = eps_level
        self.fine_level = fine_level
        levels = [base if base is not None else build_initial_mesh()]
        for _ in range(fine_level):
            levels.append(red_refine(levels[-1]))
        self.levels: Sequence[TriMesh] = tuple(levels)

    @property
    def coarse(self) -> TriMesh:
        return self.levels[self.coarse_level]

    @property
    def eps(self) -> TriMesh:
        return self.levels[self.eps_level]

    @property
    def fine(self) -> TriMesh:
        return self.levels[self.fine_level]

    def with_coarse_level(self, coarse_level: int) -> "MeshHierarchy":
        """Same meshes, different observation level (shares the level objects)."""
        h = object.__new__(MeshHierarchy)
        if not 0 <= coarse_level <= self.eps_level:
            raise MeshError("coarse level must not exceed eps level")
        h.coarse_level = coarse_level
        h.eps_level = self.eps_level
        h.fine_level = self.fine_level
        h.levels = self.levels
        return h

    def ancestor(self, elements, from_level: int, to_level: int) -> np.ndarray:
        """Map element indices at ``from_level`` to their ancestors at ``to_level``."""
        if to_level > from_level:
            raise MeshError("ancestor level must be coarser")
        return np.asarray(elements, dtype=np.int64) >> (2 * (from_level - to_level))

    def descendants(self, elements, from_level: int, to_level: int) -> np.ndarray:
        """All descendants at ``to_level`` of the given elements, grouped by parent."""
        if to_level < from_level:
            raise MeshError("descendant level must be finer")
        k = 4 ** (to_level - from_level)
        e = np.asarray(elements, dtype=np.int64)
        return (e[:, None] * k + np.arange(k)[None, :]).ravel()
