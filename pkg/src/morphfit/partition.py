"""Landmark-driven partition of the template mesh.

Boundaries are traced as shortest edge-graph paths between consecutive
landmarks of each chain, then parts are flood-filled from user seeds with the
boundary vertices acting as walls. Finally every vertex gets the Euclidean
distance to the nearest boundary polyline adjacent to its own part, and the
part on the other side of that polyline.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csgraph

from .errors import PartitionError, ValidationError
from .landmarks import LandmarkSet
from .mesh import Mesh
from .textfmt import read_toml, toml_value

__all__ = [
    "Chain",
    "PartitionSpec",
    "BoundaryLine",
    "PartitionMap",
    "trace_boundary",
    "label_parts",
    "boundary_distance",
    "build_partition",
    "read_partition_spec",
    "write_partition_spec",
    "write_partition_map",
    "PARTITION_HEADER",
    "NO_PART",
]

PARTITION_HEADER = "morphfit-partition v1"
NO_PART = 0


@dataclass(frozen=True)
class Chain:
    """Ordered landmark labels forming one boundary; ``parts`` optionally pins its two sides."""

    labels: tuple
    closed: bool = False
    parts: tuple = None


@dataclass(frozen=True)
class PartitionSpec:
    n_parts: int
    seeds: tuple
    chains: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.n_parts < 1:
            raise PartitionError("partition needs at least one part")
        if len(self.seeds) != self.n_parts:
            raise PartitionError(
                f"expected {self.n_parts} seeds (one per part), got {len(self.seeds)}"
            )
        if self.n_parts >= 2 and not self.chains:
            raise PartitionError("a partition with 2 or more parts needs at least one boundary")


@dataclass(frozen=True, eq=False)
class BoundaryLine:
    path: np.ndarray
    parts: tuple  # (lower id, higher id)
    closed: bool = False


@dataclass(frozen=True, eq=False)
class PartitionMap:
    """Per-vertex part labels (1-based), boundary polylines and boundary distances.

    ``distance`` is ``inf`` and ``opposite`` is ``NO_PART`` for vertices whose
    part touches no boundary.
    """

    labels: np.ndarray
    n_parts: int
    boundaries: tuple
    distance: np.ndarray = field(default=None)
    opposite: np.ndarray = field(default=None)

    def part_vertices(self, part) -> np.ndarray:
        return np.flatnonzero(self.labels == part)

    @property
    def boundary_vertices(self) -> np.ndarray:
        if not self.boundaries:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([b.path for b in self.boundaries]))


def _shortest_path(mesh, src, dst):
    dist, pred = csgraph.dijkstra(mesh.adjacency, indices=src, return_predecessors=True)
    if not np.isfinite(dist[dst]):
        raise PartitionError(f"landmark vertices {src} and {dst} are not connected in the mesh")
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def trace_boundary(mesh: Mesh, chain, closed=False) -> np.ndarray:
    """Concatenate shortest edge paths (Euclidean weights) between consecutive vertices.

    Parameters
    ----------
    mesh : Mesh
    chain : sequence of int
        Landmark vertex indices in boundary order.
    closed : bool
        Also connect the last vertex back to the first.

    Returns
    -------
    ndarray of int
        Vertex path. For closed chains the first vertex is not repeated.
    """
    chain = [int(c) for c in chain]
    if len(chain) < 2:
        raise PartitionError("a boundary chain needs at least two landmarks")
    if closed and len(chain) < 3:
        raise PartitionError("a closed boundary chain needs at least three landmarks")
    stops = chain + [chain[0]] if closed else chain
    path = [stops[0]]
    for a, b in zip(stops[:-1], stops[1:]):
        if a == b:
            raise PartitionError(f"repeated landmark vertex {a} in chain")
        path.extend(_shortest_path(mesh, a, b)[1:])
    if closed:
        path = path[:-1]
    if len(set(path)) != len(path):
        raise PartitionError("non-simple boundary")
    return np.array(path, dtype=np.int64)


def _components_without(mesh, wall):
    keep = np.flatnonzero(~wall)
    sub = mesh.adjacency[keep][:, keep]
    n_comp, comp = csgraph.connected_components(sub, directed=False)
    full = np.full(mesh.n_vertices, -1, dtype=np.int64)
    full[keep] = comp
    return n_comp, full


def label_parts(mesh: Mesh, boundaries, seeds, boundary_parts=None, closed=None) -> PartitionMap:
    """Flood-fill part labels from ``seeds`` with boundary vertices as walls.

    Parts are numbered ``1..P`` in seed order. Each boundary vertex goes to
    the lowest-numbered part among its neighbours. Each polyline is tagged
    with the two parts it separates, taken from ``boundary_parts`` when given,
    otherwise from the labels around it.
    """
    n = mesh.n_vertices
    seeds = [int(s) for s in seeds]
    boundaries = [np.asarray(b, dtype=np.int64) for b in boundaries]
    closed = list(closed) if closed is not None else [False] * len(boundaries)
    wall = np.zeros(n, dtype=bool)
    for b in boundaries:
        wall[b] = True
    for s in seeds:
        if not 0 <= s < n:
            raise PartitionError(f"seed vertex {s} out of range")
        if wall[s]:
            raise PartitionError(f"seed vertex {s} lies on a boundary")

    n_comp, comp = _components_without(mesh, wall)
    if n_comp != len(seeds):
        raise PartitionError(f"expected {len(seeds)} components, found {n_comp}")
    seen = {}
    for part, s in enumerate(seeds, start=1):
        if comp[s] in seen:
            raise PartitionError(
                f"seeds {seeds[seen[comp[s]] - 1]} and {s} lie in the same component"
            )
        seen[comp[s]] = part
    labels = np.zeros(n, dtype=np.int64)
    labels[~wall] = [seen[c] for c in comp[~wall]]
    interior_labels = labels.copy()

    adj = mesh.adjacency
    pending = np.flatnonzero(wall)
    while len(pending):
        progressed = False
        rest = []
        snapshot = labels.copy()
        for v in pending:
            nb = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
            cand = snapshot[nb]
            cand = cand[cand > 0]
            if len(cand):
                labels[v] = cand.min()
                progressed = True
            else:
                rest.append(v)
        if not progressed:
            raise PartitionError(f"boundary vertex {rest[0]} is not adjacent to any part")
        pending = np.array(rest, dtype=np.int64)

    tagged = []
    for k, b in enumerate(boundaries):
        if boundary_parts is not None and boundary_parts[k] is not None:
            pa, pb = sorted(int(p) for p in boundary_parts[k])
            if pa == pb or not (1 <= pa and pb <= len(seeds)):
                raise PartitionError(f"boundary {k}: invalid part pair {boundary_parts[k]}")
        else:
            touching = set()
            for v in b:
                nb = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
                touching.update(int(x) for x in interior_labels[nb] if x > 0)
            if len(touching) != 2:
                raise PartitionError(
                    f"boundary {k} touches {len(touching)} parts {sorted(touching)}; "
                    "give its 'parts' explicitly"
                )
            pa, pb = sorted(touching)
        tagged.append(BoundaryLine(path=b, parts=(pa, pb), closed=closed[k]))
    return PartitionMap(labels=labels, n_parts=len(seeds), boundaries=tuple(tagged))


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = np.dot(ab, ab)
    if denom == 0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def boundary_distance(mesh: Mesh, pmap: PartitionMap):
    """Distance from each vertex to the nearest boundary polyline adjacent to its part.

    Returns
    -------
    distance : ndarray, shape (n,)
        Euclidean point-to-segment distance; 0 on boundary vertices, ``inf``
        when the vertex's part has no boundary.
    opposite : ndarray of int, shape (n,)
        The other part of the achieving polyline (``NO_PART`` if none). Ties
        go to the earliest polyline.
    """
    v = mesh.vertices
    n = len(v)
    distance = np.full(n, np.inf)
    opposite = np.full(n, NO_PART, dtype=np.int64)
    for line in pmap.boundaries:
        pa, pb = line.parts
        members = np.flatnonzero((pmap.labels == pa) | (pmap.labels == pb))
        if not len(members):
            continue
        path = line.path
        seg = list(zip(path[:-1], path[1:]))
        if line.closed and len(path) > 2:
            seg.append((path[-1], path[0]))
        p = v[members]
        d = np.full(len(members), np.inf)
        for i, j in seg:
            d = np.minimum(d, _point_segment_distance(p, v[i], v[j]))
        on_line = np.isin(members, path)
        d[on_line] = 0.0
        better = d < distance[members]
        idx = members[better]
        distance[idx] = d[better]
        own = pmap.labels[idx]
        opposite[idx] = np.where(own == pa, pb, pa)
    return distance, opposite


def build_partition(mesh: Mesh, landmarks: LandmarkSet, spec: PartitionSpec) -> PartitionMap:
    """Trace, label and measure: the full partition for ``spec``."""
    landmarks.check_against(mesh.n_vertices)
    paths, pins, closed = [], [], []
    for k, chain in enumerate(spec.chains):
        verts = []
        for label in chain.labels:
            try:
                verts.append(landmarks.vertex_of(label))
            except ValidationError:
                raise PartitionError(
                    f"boundary {k} references unknown landmark label {label!r}"
                ) from None
        paths.append(trace_boundary(mesh, verts, chain.closed))
        pins.append(chain.parts)
        closed.append(chain.closed)
    pmap = label_parts(mesh, paths, spec.seeds, boundary_parts=pins, closed=closed)
    d, chi = boundary_distance(mesh, pmap)
    return replace(pmap, distance=d, opposite=chi)


def read_partition_spec(path) -> PartitionSpec:
    """Read a ``morphfit-partition v1`` file.

    Body (TOML)::

        parts = 2
        seeds = [120, 7]          # one template vertex per part, part 1 first
        [[boundary]]
        chain = ["0", "1", "2"]   # landmark labels
        closed = true
        parts = [1, 2]            # optional
    """
    data = read_toml(path, PARTITION_HEADER)
    try:
        n_parts = int(data["parts"])
        seeds = tuple(int(s) for s in data["seeds"])
        chains = []
        for b in data.get("boundary", []):
            pins = b.get("parts")
            chains.append(
                Chain(
                    labels=tuple(str(x) for x in b["chain"]),
                    closed=bool(b.get("closed", False)),
                    parts=tuple(int(p) for p in pins) if pins is not None else None,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{os.fspath(path)}: bad partition spec ({exc})") from None
    return PartitionSpec(n_parts=n_parts, seeds=seeds, chains=tuple(chains),
                         name=str(data.get("name", "")))


def write_partition_spec(path, spec: PartitionSpec):
    lines = [PARTITION_HEADER]
    if spec.name:
        lines.append(f"name = {toml_value(spec.name)}")
    lines += [f"parts = {spec.n_parts}", f"seeds = {toml_value(list(spec.seeds))}"]
    for c in spec.chains:
        lines += ["", "[[boundary]]", f"chain = {toml_value(list(c.labels))}",
                  f"closed = {toml_value(c.closed)}"]
        if c.parts is not None:
            lines.append(f"parts = {toml_value(list(c.parts))}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_partition_map(path, pmap: PartitionMap):
    """Serialize a partition map as JSON (labels, boundaries, distances)."""
    d = pmap.distance
    payload = {
        "format": "morphfit-partition-map v1",
        "n_parts": pmap.n_parts,
        "labels": pmap.labels.tolist(),
        "boundaries": [
            {"path": b.path.tolist(), "parts": list(b.parts), "closed": b.closed}
            for b in pmap.boundaries
        ],
        "distance": None if d is None else [x if np.isfinite(x) else None for x in d.tolist()],
        "opposite": None if pmap.opposite is None else pmap.opposite.tolist(),
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
