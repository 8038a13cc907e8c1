"""Synthetic meshes with known ground truth.

``bump_sheet`` builds a 3D sheet analog of the classic local-minimum
configuration: a template with a low, wide bump and a target whose bump is
taller, narrower and shifted. ``face_like`` builds a face-shaped height field
with 11- and 68-landmark layouts for the partition examples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .landmarks import LandmarkSet
from .mesh import Mesh, PointCloud
from .partition import Chain, PartitionSpec

__all__ = ["grid_faces", "BumpSheet", "bump_sheet", "FaceSample", "face_like", "write_samples", "data_dir"]


def grid_faces(order, nx, ny):
    """Triangulate an ``nx x ny`` vertex grid; ``order[i, j]`` is the vertex id of node (i, j)."""
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b = order[i, j], order[i + 1, j]
            c, d = order[i + 1, j + 1], order[i, j + 1]
            # alternate diagonals so the sheet has no preferred shear direction
            if (i + j) % 2 == 0:
                faces += [[a, b, c], [a, c, d]]
            else:
                faces += [[a, b, d], [b, c, d]]
    return np.array(faces, dtype=np.int64)


@dataclass
class BumpSheet:
    template: Mesh
    target: Mesh
    true_positions: np.ndarray  # per template vertex, its anatomically correct target point
    landmarks: LandmarkSet  # single landmark on the feature apex
    prewarp_landmarks: LandmarkSet  # 11 landmarks for the two-part partition
    spec: PartitionSpec
    feature: np.ndarray  # canonical cross-section feature vertices
    canonical: np.ndarray  # canonical cross-section vertices (target ids match)
    bump_height: float
    delta: float

    @property
    def target_cloud(self) -> PointCloud:
        """Target vertices as a cloud: closest points are target vertex ids."""
        return PointCloud.from_mesh_vertices(self.target)

    def config(self, **changes):
        """Registration settings under which the plain run gets trapped.

        The landmark weight is deliberately weak; with ``gamma`` around 10
        the single apex landmark is enough to pull the baseline out.
        """
        from .config import RegistrationConfig
        from .prewarp import SmoothingConfig

        base = RegistrationConfig(gamma=0.1, eta=0.1, smoothing=SmoothingConfig(delta=self.delta))
        return base.replace(**changes)

    def feature_rms(self, vertices) -> float:
        d = np.asarray(vertices)[self.feature] - self.true_positions[self.feature]
        return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def bump_sheet(n_cols=15, half_rows=4, feature=(4, 10), template_height=1.0,
               target_height=4.0, target_span=(5.5, 9.6)) -> BumpSheet:
    """Sheet pair reproducing the wide-vs-narrow bump trap.

    Vertices ``0 .. n_cols-1`` form the canonical cross-section ``y = 0``,
    so the feature occupies indices ``feature[0] .. feature[1]``. Target
    vertex ``i`` is the true match of template vertex ``i``: inside the
    feature patch the target is an exact affine image of the template
    (x compressed onto ``target_span``, z stretched), elsewhere identical.
    """
    f0, f1 = feature
    rows = [0] + [r for k in range(1, half_rows + 1) for r in (-k, k)]
    order = np.zeros((n_cols, 2 * half_rows + 1), dtype=np.int64)
    coords = []
    vid = 0
    for r in rows:
        for i in range(n_cols):
            order[i, r + half_rows] = vid
            coords.append((i, r))
            vid += 1
    coords = np.array(coords, dtype=np.float64)
    faces = grid_faces(order, n_cols, 2 * half_rows + 1)

    col, row = coords[:, 0], coords[:, 1]
    inside = (col >= f0) & (col <= f1) & (np.abs(row) <= half_rows - 2)
    profile = np.where(inside, np.sin(np.pi * (col - f0) / (f1 - f0)), 0.0)
    taper = np.clip(1.0 - (np.abs(row) - 1.0) / (half_rows - 2.0), 0.0, 1.0)
    taper = np.where(np.abs(row) <= 1, 1.0, taper)
    shape = profile * taper

    tv = np.c_[col, row, template_height * shape]
    a = (target_span[1] - target_span[0]) / (f1 - f0)
    c = target_span[0] - a * f0
    k = target_height / template_height
    affine = np.array([[a, 0, 0], [0, 1, 0], [0, 0, k], [c, 0, 0]], dtype=np.float64)
    qv = tv.copy()
    qv[inside] = tv[inside] @ affine[:3] + affine[3]

    template = Mesh(tv, faces)
    target = Mesh(qv, faces)

    apex = int(order[(f0 + f1) // 2, half_rows])
    landmarks = LandmarkSet([apex], qv[[apex]], ("apex",))

    ring = half_rows - 1
    corner_nodes = [(f0 - 1, -ring), (f1 + 1, -ring), (f1 + 1, ring), (f0 - 1, ring)]
    mid = (f0 + f1) // 2
    feature_nodes = [(f0, 0), (mid, 0), (f1, 0), (mid, -(ring - 1)), (mid, ring - 1)]
    outer_nodes = [(0, 0), (n_cols - 1, 0)]
    names = ["c0", "c1", "c2", "c3", "f0", "apex", "f1", "f2", "f3", "o0", "o1"]
    nodes = corner_nodes + feature_nodes + outer_nodes
    ids = [int(order[i, r + half_rows]) for i, r in nodes]
    pre_lm = LandmarkSet(ids, qv[ids], tuple(names))
    spec = PartitionSpec(
        n_parts=2,
        seeds=(int(order[0, half_rows]), int(order[mid, half_rows])),
        chains=(Chain(labels=("c0", "c1", "c2", "c3"), closed=True),),
        name="bump-sheet two-part",
    )
    return BumpSheet(
        template=template,
        target=target,
        true_positions=qv,
        landmarks=landmarks,
        prewarp_landmarks=pre_lm,
        spec=spec,
        feature=np.arange(f0, f1 + 1),
        canonical=np.arange(n_cols),
        bump_height=target_height,
        delta=1.0,
    )


# grid nodes (i, j) on the 41 x 49 face grid; x = (i - 20) * 0.05, y = (j - 24) * 0.05
_JAW = [(int(round(20 + 20 * np.cos(t))), int(round(24 + 22 * np.sin(t))))
        for t in np.pi + np.arange(17) * np.pi / 16]
_BROWS = [(8, 32), (10, 35), (13, 36), (16, 35), (18, 32),
          (22, 32), (24, 35), (27, 36), (30, 35), (32, 32)]
_NOSE = [(20, 30), (20, 28), (20, 26), (20, 24), (17, 21), (18, 20), (20, 20), (22, 20), (23, 21)]
_EYES = [(8, 29), (10, 31), (13, 31), (15, 29), (13, 27), (10, 27),
         (25, 29), (27, 31), (30, 31), (32, 29), (30, 27), (27, 27)]
_MOUTH = [(14, 11), (15, 13), (17, 14), (20, 14), (23, 14), (25, 13), (26, 11),
          (25, 9), (23, 8), (20, 8), (17, 8), (15, 9),
          (16, 11), (18, 12), (20, 12), (22, 12), (24, 11), (22, 10), (20, 10), (18, 10)]
LANDMARK68_NODES = _JAW + _BROWS + _NOSE + _EYES + _MOUTH

HANDPICKED11_NODES = {
    "ring_top": (20, 32), "ring_rt": (24, 28), "ring_rb": (25, 19),
    "ring_bot": (20, 17), "ring_lb": (15, 19), "ring_lt": (16, 28),
    "nose_tip": (20, 22), "nose_bridge": (20, 28), "alar_l": (18, 21), "alar_r": (22, 21),
    "chin": (20, 4),
}


@dataclass
class FaceSample:
    template: Mesh
    target: Mesh
    true_positions: np.ndarray
    landmarks11: LandmarkSet
    spec11: PartitionSpec
    landmarks68: LandmarkSet
    spec68: PartitionSpec
    node_id: np.ndarray  # (41, 49) grid node -> vertex id


def _face_height(x, y, nose_height, nose_width):
    base = 0.35 * np.sqrt(np.clip(1.0 - x ** 2 / 1.2 - y ** 2 / 2.0, 0.0, None))
    nose = nose_height * np.exp(-0.5 * ((x / nose_width) ** 2 + ((y + 0.05) / 0.2) ** 2))
    return base + nose


def face_like(nx=41, ny=49, spacing=0.05) -> FaceSample:
    """Face-shaped height-field template plus a target from a known warp.

    The target (a different "subject") is the template under a global affine
    with a narrower, taller nose; target vertex ``i`` is the true match of
    template vertex ``i``.
    """
    order = np.arange(nx * ny).reshape(nx, ny)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    x = (ii.ravel() - (nx - 1) / 2) * spacing
    y = (jj.ravel() - (ny - 1) / 2) * spacing
    faces = grid_faces(order, nx, ny)
    template = Mesh(np.c_[x, y, _face_height(x, y, 0.2, 0.08)], faces)

    # nose narrowing fades out with distance from the nose axis
    mask = np.exp(-0.5 * ((x / 0.2) ** 2 + ((y + 0.05) / 0.3) ** 2))
    xw = x * (1.0 - 0.25 * mask)
    zw = _face_height(xw, y, 0.34, 0.06)
    lin = np.array([[1.08, 0.02, 0.0], [-0.02, 1.03, 0.0], [0.0, 0.0, 1.1]])
    warped = np.c_[xw, y, zw] @ lin + np.array([0.02, -0.03, 0.05])
    target = Mesh(warped, faces)

    ids11 = [int(order[n]) for n in HANDPICKED11_NODES.values()]
    lm11 = LandmarkSet(ids11, warped[ids11], tuple(HANDPICKED11_NODES))
    spec11 = PartitionSpec(
        n_parts=2,
        seeds=(int(order[3, 45]), int(order[20, 25])),
        chains=(Chain(("ring_top", "ring_rt", "ring_rb", "ring_bot", "ring_lb", "ring_lt"), closed=True),),
        name="handpicked 11-landmark two-part (nose region vs rest)",
    )

    ids68 = [int(order[n]) for n in LANDMARK68_NODES]
    lm68 = LandmarkSet(ids68, warped[ids68])
    lab = lambda *r: tuple(str(k) for k in r)  # noqa: E731
    spec68 = PartitionSpec(
        n_parts=8,
        seeds=tuple(int(order[n]) for n in
                    [(4, 40), (0, 0), (13, 34), (27, 34), (12, 29), (28, 29), (20, 25), (20, 11)]),
        chains=(
            Chain(lab(*range(0, 17)), closed=False),
            Chain(lab(*range(17, 22)), closed=True),
            Chain(lab(*range(22, 27)), closed=True),
            Chain(lab(*range(36, 42)), closed=True),
            Chain(lab(*range(42, 48)), closed=True),
            Chain(lab(27, 31, 32, 33, 34, 35), closed=True),
            Chain(lab(*range(48, 60)), closed=True),
        ),
        name="68-landmark eight-part (unofficial layout)",
    )
    return FaceSample(template, target, warped, lm11, spec11, lm68, spec68, order)


def write_samples(directory) -> dict:
    """Write the bundled sample inputs into ``directory``; returns name -> path.

    The output is deterministic, so the files shipped in ``morphfit/data``
    are exactly what this function produces.
    """
    from .config import write_config
    from .landmarks import write_landmarks
    from .meshio import save_mesh, save_point_cloud
    from .partition import write_partition_spec

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    face, bump = face_like(), bump_sheet()
    writers = {
        "face_template.ply": lambda p: save_mesh(p, face.template),
        "face_target.ply": lambda p: save_mesh(p, face.target),
        "face_landmarks11.txt": lambda p: write_landmarks(p, face.landmarks11),
        "face_two_part.partition": lambda p: write_partition_spec(p, face.spec11),
        "face_landmarks68.txt": lambda p: write_landmarks(p, face.landmarks68),
        "face_eight_part_unofficial.partition": lambda p: write_partition_spec(p, face.spec68),
        "bump_template.ply": lambda p: save_mesh(p, bump.template),
        "bump_target.ply": lambda p: save_point_cloud(p, bump.target_cloud),
        "bump_truth.ply": lambda p: save_mesh(p, bump.target),
        "bump_landmarks.txt": lambda p: write_landmarks(p, bump.prewarp_landmarks),
        "bump_apex.txt": lambda p: write_landmarks(p, bump.landmarks),
        "bump_two_part.partition": lambda p: write_partition_spec(p, bump.spec),
        "bump_config.txt": lambda p: write_config(p, bump.config()),
    }
    out = {}
    for name, write in writers.items():
        write(directory / name)
        out[name] = directory / name
    return out


def data_dir() -> Path:
    """Directory of the sample files shipped with the package."""
    return Path(__file__).resolve().parent / "data"
