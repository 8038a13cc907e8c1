"""Exact closest-point queries against a target mesh or point cloud.

Triangle targets use a KD-tree over triangle centroids as a pruning
structure: a first pass over the few nearest centroids gives an upper bound
``ub`` on the true distance, and every triangle that could beat it lies
within ``ub + max_radius`` of the query (``max_radius`` being the largest
centroid-to-corner distance). All such candidates are then scored with the
exact point-triangle distance, so results are exact rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .mesh import Mesh, PointCloud

__all__ = [
    "ClosestPointIndex",
    "ClosestPoints",
    "build_index",
    "closest_point_on_triangles",
]

# region codes from closest_point_on_triangles
REGION_FACE = 0
REGION_VERTEX = (1, 2, 3)  # vertex a, b, c
REGION_EDGE = (4, 5, 6)  # edge ab, bc, ca


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangles ``(a, b, c)`` to points ``p``, row-wise.

    Vectorized barycentric-region case analysis (Voronoi regions of the
    vertices, then edges, then the face interior).

    Returns
    -------
    point : ndarray, shape (k, 3)
    bary : ndarray, shape (k, 3)
        Barycentric weights of ``point`` with respect to ``(a, b, c)``.
    region : ndarray of int, shape (k,)
        0 face interior, 1-3 vertex a/b/c, 4-6 edge ab/bc/ca.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    k = len(p)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    bary = np.zeros((k, 3))
    region = np.full(k, -1, dtype=np.int64)
    todo = np.ones(k, dtype=bool)

    def take(mask, u, v, w, code):
        nonlocal todo
        m = mask & todo
        bary[m, 0] = u[m] if np.ndim(u) else u
        bary[m, 1] = v[m] if np.ndim(v) else v
        bary[m, 2] = w[m] if np.ndim(w) else w
        region[m] = code
        todo = todo & ~m

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0, 1)
        take((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0, 2)
        vc = d1 * d4 - d3 * d2
        t = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - t, t, 0.0, 4)
        take((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0, 3)
        vb = d5 * d2 - d1 * d6
        t = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - t, 0.0, t, 6)
        va = d3 * d6 - d5 * d4
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1.0 - t, t, 5)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        take(np.ones(k, dtype=bool), 1.0 - v - w, v, w, 0)

    # zero-area triangles can leave NaN weights; fall back to the nearest corner
    bad = ~np.all(np.isfinite(bary), axis=1)
    if bad.any():
        corners = np.stack([a[bad], b[bad], c[bad]], axis=1)
        j = np.argmin(np.linalg.norm(corners - p[bad, None, :], axis=2), axis=1)
        bary[bad] = np.eye(3)[j]
        region[bad] = j + 1

    point = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    # vertex regions return the vertex exactly
    for code, src in ((1, a), (2, b), (3, c)):
        m = region == code
        point[m] = src[m]
    return point, bary, region


@dataclass
class ClosestPoints:
    """Batch query result; row ``i`` answers query ``i`` (input order kept)."""

    positions: np.ndarray
    normals: np.ndarray
    primitives: np.ndarray
    distances: np.ndarray
    on_boundary: np.ndarray
    degenerate_normal: np.ndarray

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i):
        return {
            "position": self.positions[i],
            "normal": self.normals[i],
            "primitive": int(self.primitives[i]),
            "distance": float(self.distances[i]),
        }


class ClosestPointIndex:
    """Immutable closest-point structure over a :class:`Mesh` or :class:`PointCloud`.

    Queries are read-only and safe to run from several threads.
    """

    def __init__(self, target, k_initial=8):
        if isinstance(target, Mesh):
            if target.n_faces == 0:
                raise ValidationError("empty target")
            self.target = target
            self.is_mesh = True
            tri = target.vertices[target.faces]
            self._tri = tri
            centroids = tri.mean(axis=1)
            self._radius = float(np.max(np.linalg.norm(tri - centroids[:, None, :], axis=2)))
            self._tree = cKDTree(centroids)
            self._boundary_vertex = np.zeros(target.n_vertices, dtype=bool)
            bedges = target.boundary_edges
            self._boundary_vertex[bedges.ravel()] = True
            self._boundary_edge = set(map(tuple, bedges.tolist()))
            self._vertex_normals = target.vertex_normals
            self._face_normals = target.face_normals
        elif isinstance(target, PointCloud):
            if len(target) == 0:
                raise ValidationError("empty target")
            self.target = target
            self.is_mesh = False
            self._tree = cKDTree(target.points)
        else:
            raise TypeError(f"unsupported target type {type(target).__name__}")
        self.k_initial = k_initial
        self.scale = max(float(np.max(np.abs(self._tree.data))), 1.0)

    @property
    def n_primitives(self) -> int:
        return self.target.n_faces if self.is_mesh else len(self.target)

    def closest_point(self, query):
        """Closest point for one 3D query: dict with position, normal, primitive, distance."""
        return self.query(np.asarray(query, dtype=np.float64).reshape(1, 3))[0]

    def query(self, points) -> ClosestPoints:
        """Closest points for an ``(k, 3)`` batch; output rows follow input order."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.is_mesh:
            return self._query_mesh(points)
        return self._query_cloud(points)

    def _query_cloud(self, points):
        k = min(4, len(self.target))
        dist, idx = self._tree.query(points, k=k)
        dist = dist.reshape(len(points), k)
        idx = idx.reshape(len(points), k)
        pts = self.target.points
        # exact distances, then lowest index among exact ties
        exact = np.linalg.norm(pts[idx] - points[:, None, :], axis=2)
        tied = exact == exact.min(axis=1, keepdims=True)
        best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
        # a tie beyond the k nearest is possible only for k equidistant points; re-query those
        full = exact[:, -1] == exact.min(axis=1)
        for r in np.flatnonzero(full & (k < len(pts))):
            cand = self._tree.query_ball_point(points[r], exact[r].min() * (1 + 1e-12) + 1e-300)
            cand = np.asarray(cand)
            d = np.linalg.norm(pts[cand] - points[r], axis=1)
            best[r] = cand[d == d.min()].min()
        pos = pts[best].copy()
        return ClosestPoints(
            positions=pos,
            normals=self.target.normals[best].copy(),
            primitives=best,
            distances=np.linalg.norm(points - pos, axis=1),
            on_boundary=np.zeros(len(points), dtype=bool),
            degenerate_normal=np.linalg.norm(self.target.normals[best], axis=1) == 0,
        )

    def _query_mesh(self, points):
        nq = len(points)
        nf = self.target.n_faces
        k = min(self.k_initial, nf)
        _, first = self._tree.query(points, k=k)
        first = np.asarray(first).reshape(nq, k)
        qi = np.repeat(np.arange(nq), k)
        fi = first.ravel()
        _, _, _, d0 = self._score(points[qi], fi)
        ub = d0.reshape(nq, k).min(axis=1)

        slack = 1e-9 * self.scale
        lists = self._tree.query_ball_point(points, ub + self._radius + slack)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=nq)
        qi = np.repeat(np.arange(nq), counts)
        fi = np.fromiter((f for x in lists for f in x), dtype=np.int64, count=int(counts.sum()))
        pt, bary, region, dist = self._score(points[qi], fi)

        # per query: smallest distance, then lowest face id
        order = np.lexsort((fi, dist, qi))
        starts = np.searchsorted(qi[order], np.arange(nq))
        sel = order[starts]

        face = fi[sel]
        pos = pt[sel]
        bary = bary[sel]
        region = region[sel]
        corners = self.target.faces[face]
        nrm = np.einsum("ij,ijk->ik", bary, self._vertex_normals[corners])
        length = np.linalg.norm(nrm, axis=1)
        weak = length < 1e-12
        nrm[~weak] /= length[~weak, None]
        nrm[weak] = self._face_normals[face[weak]]
        degenerate = np.linalg.norm(nrm, axis=1) == 0
        return ClosestPoints(
            positions=pos,
            normals=nrm,
            primitives=face,
            distances=np.linalg.norm(points - pos, axis=1),
            on_boundary=self._on_boundary(corners, region),
            degenerate_normal=degenerate,
        )

    def _score(self, q, faces):
        tri = self._tri[faces]
        pt, bary, region = closest_point_on_triangles(q, tri[:, 0], tri[:, 1], tri[:, 2])
        return pt, bary, region, np.linalg.norm(q - pt, axis=1)

    def _on_boundary(self, corners, region):
        out = np.zeros(len(region), dtype=bool)
        for code, (i, j) in zip(REGION_EDGE, ((0, 1), (1, 2), (2, 0))):
            for r in np.flatnonzero(region == code):
                a, b = corners[r, i], corners[r, j]
                out[r] = (min(a, b), max(a, b)) in self._boundary_edge
        for code, i in zip(REGION_VERTEX, (0, 1, 2)):
            m = region == code
            out[m] = self._boundary_vertex[corners[m, i]]
        return out


def build_index(target) -> ClosestPointIndex:
    """Build a :class:`ClosestPointIndex`; raises ``ValidationError`` on an empty target."""
    return ClosestPointIndex(target)
