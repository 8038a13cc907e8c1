import numpy as np
import pytest

from morphfit.errors import ValidationError
from morphfit.mesh import Mesh, PointCloud
from morphfit.spatial import build_index, closest_point_on_triangles

from conftest import brute_mesh_distance, brute_point_triangle, make_grid, tetrahedron


def test_point_triangle_matches_oracle(rng):
    for _ in range(500):
        a, b, c, p = rng.normal(size=(4, 3))
        got, bary, region = closest_point_on_triangles(p[None], a[None], b[None], c[None])
        want = brute_point_triangle(p, a, b, c)
        np.testing.assert_allclose(got[0], want, atol=1e-10)
        np.testing.assert_allclose(bary.sum(), 1.0, atol=1e-12)


def test_single_triangle_index():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    idx = build_index(m)
    assert idx.n_primitives == 1


def test_query_above_centroid():
    m = Mesh([[0, 0, 0], [3, 0, 0], [0, 3, 0]], [[0, 1, 2]])
    res = build_index(m).closest_point([1.0, 1.0, 2.5])
    np.testing.assert_allclose(res["position"], [1.0, 1.0, 0.0], atol=1e-15)
    assert res["distance"] == pytest.approx(2.5, abs=1e-15)
    np.testing.assert_allclose(res["normal"], [0, 0, 1])


def test_query_at_vertex():
    m = tetrahedron()
    res = build_index(m).closest_point(m.vertices[2])
    assert res["distance"] == 0.0
    np.testing.assert_array_equal(res["position"], m.vertices[2])


def test_empty_targets_rejected():
    with pytest.raises(ValidationError, match="empty target"):
        build_index(PointCloud(np.zeros((0, 3))))
    with pytest.raises(ValidationError, match="empty target"):
        build_index(Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int)))


def test_mesh_queries_match_exhaustive_scan(rng):
    m = make_grid(8, 7, z=lambda x, y: np.sin(x) * np.cos(0.7 * y))
    m = Mesh(m.vertices + rng.normal(scale=0.1, size=m.vertices.shape), m.faces)
    assert m.n_faces <= 200
    idx = build_index(m)
    qs = rng.uniform(-3, 10, size=(300, 3))
    res = idx.query(qs)
    for q, d, pos in zip(qs, res.distances, res.positions):
        assert d == pytest.approx(brute_mesh_distance(m, q), abs=1e-10)
        assert d == pytest.approx(np.linalg.norm(q - pos), rel=1e-12)


def test_cloud_queries_match_brute_force(rng):
    pts = rng.normal(size=(10_000, 3))
    nrm = rng.normal(size=(10_000, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    idx = build_index(PointCloud(pts, nrm))
    qs = rng.normal(size=(100, 3)) * 1.5
    res = idx.query(qs)
    brute = np.argmin(np.linalg.norm(qs[:, None] - pts[None], axis=2), axis=1)
    np.testing.assert_array_equal(res.primitives, brute)
    np.testing.assert_allclose(res.normals, nrm[brute])


def test_tie_break_lowest_primitive():
    # query equidistant from two coincident-distance triangles
    v = [[-1, 0, 0], [-2, 1, 0], [-2, -1, 0], [1, 0, 0], [2, 1, 0], [2, -1, 0]]
    m = Mesh(v, [[3, 4, 5], [0, 2, 1]])
    res = build_index(m).closest_point([0, 0, 0])
    assert res["primitive"] == 0
    pc = PointCloud([[1, 0, 0], [-1, 0, 0], [0, 1, 0]], [[0, 0, 1]] * 3)
    assert build_index(pc).closest_point([0, 0, 0])["primitive"] == 0


def test_batch_order_and_determinism(rng):
    m = make_grid(5, 5)
    idx = build_index(m)
    qs = rng.uniform(-1, 5, size=(50, 3))
    a = idx.query(qs)
    b = idx.query(qs[::-1])
    np.testing.assert_array_equal(a.positions, b.positions[::-1])
    np.testing.assert_array_equal(a.primitives, b.primitives[::-1])


def test_boundary_flag_on_open_sheet():
    m = make_grid(3, 3)
    idx = build_index(m)
    res = idx.query([[1.0, -1.0, 0.0], [1.0, 1.0, 3.0], [-1, -1, 0]])
    assert res.on_boundary.tolist() == [True, False, True]
