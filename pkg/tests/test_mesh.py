import itertools

import numpy as np
import pytest

from morphfit.errors import MeshIOError, ValidationError
from morphfit.mesh import Mesh, PointCloud, compute_vertex_normals, validate_manifold
from morphfit.meshio import load_mesh, save_mesh

from conftest import make_grid, tetrahedron


def write(path, text):
    path.write_text(text)
    return path


def test_single_triangle_obj(tmp_path):
    p = write(tmp_path / "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3
    assert m.n_edges == 3


def test_two_triangles_share_edge(tmp_path):
    p = write(tmp_path / "t.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n")
    m = load_mesh(p)
    assert m.n_edges == 5
    assert sum(tuple(e) == (0, 2) for e in m.edges.tolist()) == 1


def test_quad_face_rejected(tmp_path):
    p = write(tmp_path / "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshIOError, match="non-triangular face at line 5"):
        load_mesh(p)


def test_obj_slash_and_negative_indices(tmp_path):
    p = write(tmp_path / "s.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n")
    m = load_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2]]


def test_malformed_vertex_reports_line(tmp_path):
    p = write(tmp_path / "m.obj", "v 0 0 0\nv 1 x 0\n")
    with pytest.raises(MeshIOError, match="line 2"):
        load_mesh(p)


def test_missing_file():
    with pytest.raises(MeshIOError, match="no such file"):
        load_mesh("/nonexistent/mesh.obj")


def test_face_index_out_of_range():
    with pytest.raises(ValidationError):
        Mesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 2]])


def test_degenerate_face_rejected():
    with pytest.raises(ValidationError, match="degenerate"):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])


def test_flat_square_normals():
    m = Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    n, deg = compute_vertex_normals(m)
    assert not deg.any()
    np.testing.assert_allclose(n, np.tile([0, 0, 1.0], (4, 1)), atol=1e-15)


def test_tetrahedron_normals_radial():
    m = tetrahedron()
    n, deg = compute_vertex_normals(m)
    centroid = m.vertices.mean(axis=0)
    radial = m.vertices - centroid
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    np.testing.assert_allclose(n, radial, atol=1e-12)
    assert not deg.any()


def test_isolated_vertex_flagged():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    n, deg = compute_vertex_normals(m)
    assert deg.tolist() == [False, False, False, True]
    assert np.all(n[3] == 0)


def test_normals_unit_length(rng):
    m = make_grid(6, 5, z=lambda x, y: np.sin(x) * np.cos(y))
    n, deg = compute_vertex_normals(m)
    np.testing.assert_allclose(np.linalg.norm(n[~deg], axis=1), 1.0, atol=1e-9)


def test_normals_invariant_under_face_permutation(rng):
    m = make_grid(7, 6, z=lambda x, y: 0.3 * x * y)
    v = m.vertices + rng.normal(scale=0.1, size=m.vertices.shape)
    a = Mesh(v, m.faces)
    b = Mesh(v, m.faces[rng.permutation(m.n_faces)])
    np.testing.assert_allclose(a.vertex_normals, b.vertex_normals, atol=1e-9)


def test_edge_count_matches_brute_force(rng):
    for _ in range(5):
        m = make_grid(int(rng.integers(2, 7)), int(rng.integers(2, 7)))
        brute = set()
        for f in m.faces.tolist():
            for a, b in itertools.combinations(f, 2):
                brute.add((min(a, b), max(a, b)))
        assert m.n_edges == len(brute)
        assert set(map(tuple, m.edges.tolist())) == brute


def test_validate_closed_tetrahedron():
    rep = validate_manifold(tetrahedron())
    assert rep.passed
    assert rep.issues == [] and rep.warnings == []


def test_validate_three_faces_on_edge():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    m = Mesh(v, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    rep = validate_manifold(m)
    assert not rep.passed
    assert rep.nonmanifold_edges == [(0, 1)]


def test_validate_duplicate_face():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
    rep = validate_manifold(Mesh(v, [[0, 1, 2], [1, 2, 0]]))
    assert rep.duplicate_faces == [1]
    assert not rep.passed


def test_validate_unreferenced_vertex_warns():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 3, 3]], [[0, 1, 2]])
    rep = validate_manifold(m)
    assert rep.passed
    assert rep.unreferenced_vertices == [3]
    assert rep.warnings


@pytest.mark.parametrize("binary", [False, True])
def test_ply_roundtrip_bit_exact(tmp_path, rng, binary):
    m = make_grid(4, 3)
    m = Mesh(m.vertices + rng.normal(size=m.vertices.shape), m.faces)
    p = tmp_path / "m.ply"
    save_mesh(p, m, binary=binary)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_obj_roundtrip_relative(tmp_path, rng):
    m = make_grid(4, 3)
    m = Mesh(m.vertices * 123.456 + rng.normal(size=m.vertices.shape), m.faces)
    p = tmp_path / "m.obj"
    save_mesh(p, m)
    back = load_mesh(p)
    np.testing.assert_allclose(back.vertices, m.vertices, rtol=1e-6)
    save_mesh(p, back)
    again = load_mesh(p)
    assert np.array_equal(again.vertices, back.vertices)


def test_ply_float_properties_and_quad(tmp_path):
    p = tmp_path / "f.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nelement face 1\n"
        "property list uchar int vertex_indices\nend_header\n"
        "0 0 0 1\n1 0 0 1\n1 1 0 1\n0 1 0 1\n4 0 1 2 3\n"
    )
    with pytest.raises(MeshIOError, match="non-triangular"):
        load_mesh(p)


def test_ply_binary_quad_rejected(tmp_path):
    p = tmp_path / "q.ply"
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\n"
        "property float y\nproperty float z\nelement face 1\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode()
    verts = np.zeros((4, 3), dtype="<f4").tobytes()
    face = bytes([4]) + np.arange(4, dtype="<i4").tobytes()
    p.write_bytes(header + verts + face)
    with pytest.raises(MeshIOError):
        load_mesh(p)


def test_ply_vertex_scalars(tmp_path):
    m = make_grid(3, 3)
    p = tmp_path / "s.ply"
    save_mesh(p, m, vertex_scalars={"part": np.arange(9)})
    assert load_mesh(p).n_vertices == 9
    assert "property int part" in p.read_text()


def test_point_cloud_requires_unit_normals():
    with pytest.raises(ValidationError):
        PointCloud([[0, 0, 0]], [[0, 0, 2]])
    pc = PointCloud([[0, 0, 0]], [[0, 0, 1]])
    assert len(pc) == 1


@pytest.mark.parametrize("binary", [False, True])
def test_point_cloud_target_roundtrip(tmp_path, rng, binary):
    from morphfit.meshio import load_target, save_point_cloud

    pts = rng.normal(size=(20, 3))
    nrm = rng.normal(size=(20, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    p = tmp_path / "c.ply"
    save_point_cloud(p, PointCloud(pts, nrm), binary=binary)
    back = load_target(p)
    assert isinstance(back, PointCloud)
    assert np.array_equal(back.points, pts)
    assert np.array_equal(back.normals, nrm)


def test_point_cloud_target_without_normals(tmp_path):
    from morphfit.meshio import load_target, write_ply

    p = tmp_path / "c.ply"
    write_ply(p, np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(MeshIOError, match="normals"):
        load_target(p)


def test_mesh_target_loads_as_mesh(tmp_path):
    from morphfit.meshio import load_target

    p = tmp_path / "m.ply"
    save_mesh(p, make_grid(3, 3))
    assert isinstance(load_target(p), Mesh)
