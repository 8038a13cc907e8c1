"""Triangle mesh and point cloud containers plus derived quantities."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import sparse

from .errors import ValidationError

__all__ = [
    "Mesh",
    "PointCloud",
    "TargetSurface",
    "ValidationReport",
    "compute_vertex_normals",
    "validate_manifold",
    "bounding_box_diagonal",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions in model units.
    faces : array_like, shape (f, 3)
        0-based vertex indices per triangle.

    The arrays are copied and made read-only; derived quantities (edges,
    normals, adjacency) are computed lazily and cached.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        f = np.asarray(self.faces)
        if f.size == 0:
            f = np.zeros((0, 3), dtype=np.int64)
        f = _frozen(f, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must have shape (f, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("non-finite vertex coordinate")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValidationError(
                    f"face index out of range [0, {len(v)}): "
                    f"min {f.min()}, max {f.max()}"
                )
            bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if bad.any():
                raise ValidationError(
                    f"degenerate face {int(np.flatnonzero(bad)[0])} repeats a vertex index"
                )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted ``(i, j)`` pairs, ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0) if len(e) else np.zeros((0, 2), dtype=np.int64)
        e.setflags(write=False)
        return e

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _normals(self):
        return compute_vertex_normals(self)

    @property
    def vertex_normals(self) -> np.ndarray:
        return self._normals[0]

    @property
    def degenerate_normals(self) -> np.ndarray:
        return self._normals[1]

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero for zero-area faces."""
        n = _face_cross(self.vertices, self.faces)
        length = np.linalg.norm(n, axis=1)
        out = np.zeros_like(n)
        ok = length > 0
        out[ok] = n[ok] / length[ok, None]
        out.setflags(write=False)
        return out

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency weighted by Euclidean edge length."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = np.linalg.norm(self.vertices[i] - self.vertices[j], axis=1)
        n = self.n_vertices
        a = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        )
        return a.tocsr()

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Edges with exactly one incident face."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        if not len(e):
            return np.zeros((0, 2), dtype=np.int64)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new positions."""
        return Mesh(vertices, self.faces)

    def bounding_box_diagonal(self) -> float:
        return bounding_box_diagonal(self.vertices)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Target represented as points with unit normals."""

    points: np.ndarray
    normals: np.ndarray = field(default=None)

    def __post_init__(self):
        p = _frozen(self.points, np.float64).reshape(-1, 3) if np.size(self.points) else np.zeros((0, 3))
        if self.normals is None:
            nrm = np.zeros_like(p)
        else:
            nrm = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(p):
                raise ValidationError("normals and points differ in length")
            length = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(length - 1.0) > 1e-6):
                raise ValidationError("point cloud normals must have unit length")
        nrm.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", nrm)

    @classmethod
    def from_mesh_vertices(cls, mesh: Mesh) -> "PointCloud":
        """Vertex cloud of a mesh; degenerate vertex normals are dropped to +z."""
        nrm = mesh.vertex_normals.copy()
        nrm[mesh.degenerate_normals] = (0.0, 0.0, 1.0)
        return cls(mesh.vertices, nrm)

    def __len__(self):
        return len(self.points)


TargetSurface = Union[Mesh, PointCloud]


def bounding_box_diagonal(points) -> float:
    points = np.asarray(points)
    if not len(points):
        return 0.0
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def _face_cross(vertices, faces):
    a = vertices[faces[:, 0]]
    return np.cross(vertices[faces[:, 1]] - a, vertices[faces[:, 2]] - a)


def compute_vertex_normals(mesh: Mesh, vertices=None):
    """Area-weighted vertex normals.

    Each face contributes its unnormalized cross product (twice its area
    times its unit normal) to its three corners.

    Parameters
    ----------
    mesh : Mesh
        Connectivity source.
    vertices : array_like, optional
        Positions to use instead of ``mesh.vertices`` (same length).

    Returns
    -------
    normals : ndarray, shape (n, 3)
        Unit normals; zero rows where the 1-ring has no area.
    degenerate : ndarray of bool, shape (n,)
        True where the normal could not be defined.
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    f = mesh.faces
    acc = np.zeros((len(v), 3))
    if len(f):
        cross = _face_cross(v, f)
        for k in range(3):
            np.add.at(acc, f[:, k], cross)
    length = np.linalg.norm(acc, axis=1)
    scale = np.max(np.abs(acc)) if acc.size else 0.0
    degenerate = length <= 1e-300 + 1e-14 * scale
    normals = np.zeros_like(acc)
    ok = ~degenerate
    normals[ok] = acc[ok] / length[ok, None]
    return normals, degenerate


@dataclass
class ValidationReport:
    nonmanifold_edges: list
    duplicate_faces: list
    unreferenced_vertices: list

    @property
    def passed(self) -> bool:
        return not self.nonmanifold_edges and not self.duplicate_faces

    @property
    def warnings(self) -> list:
        if not self.unreferenced_vertices:
            return []
        return [f"unreferenced vertices: {self.unreferenced_vertices}"]

    @property
    def issues(self) -> list:
        out = []
        if self.nonmanifold_edges:
            out.append(f"non-manifold edges: {self.nonmanifold_edges}")
        if self.duplicate_faces:
            out.append(f"duplicate faces: {self.duplicate_faces}")
        return out


def validate_manifold(mesh: Mesh) -> ValidationReport:
    """Report non-manifold edges, duplicate faces and unreferenced vertices.

    Unreferenced vertices are a warning only; the report still passes.
    """
    f = mesh.faces
    nonmanifold, duplicates = [], []
    if len(f):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        nonmanifold = [tuple(int(x) for x in u) for u in uniq[counts > 2]]

        key = np.sort(f, axis=1)
        _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
        seen = set(first[counts > 1].tolist())
        dup_keys = {tuple(key[i]) for i in seen}
        duplicates = [
            i for i in range(len(f)) if tuple(key[i]) in dup_keys and i not in seen
        ]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[f.ravel()] = True
    return ValidationReport(
        nonmanifold_edges=nonmanifold,
        duplicate_faces=duplicates,
        unreferenced_vertices=np.flatnonzero(~used).tolist(),
    )
