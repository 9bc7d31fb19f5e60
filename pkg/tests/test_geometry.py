import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occlurend.geometry import (MeshError, TriangleMesh, build_uniform_laplacian, compute_vertex_normals,
                                icosphere, tetrahedron, uv_sphere)


def test_single_triangle_normals():
    mesh = compute_vertex_normals(TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]))
    np.testing.assert_allclose(mesh.vertex_normals, [[0, 0, 1]] * 3)


def test_tetrahedron_normals_point_outward():
    mesh = compute_vertex_normals(tetrahedron())
    out = mesh.vertices - mesh.vertices.mean(0)
    assert np.all(np.sum(mesh.vertex_normals * out, axis=1) > 0)


def test_icosphere_normals_match_exact_sphere():
    mesh = icosphere(4)
    assert np.abs(mesh.vertex_normals - mesh.vertices).max() < 1e-2
    np.testing.assert_allclose(np.linalg.norm(mesh.vertex_normals, axis=1), 1.0, atol=1e-6)


def test_degenerate_face_is_named():
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])
    with pytest.raises(MeshError, match="face 1"):
        compute_vertex_normals(mesh)


def test_face_index_out_of_range():
    with pytest.raises(MeshError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_normals_invariant_under_scaling_and_flip_under_winding():
    mesh = icosphere(1)
    scaled = compute_vertex_normals(mesh.with_vertices(mesh.vertices * 3.7))
    np.testing.assert_allclose(scaled.vertex_normals, mesh.vertex_normals, atol=1e-12)
    flipped = compute_vertex_normals(TriangleMesh(mesh.vertices, mesh.faces[:, ::-1]))
    np.testing.assert_allclose(flipped.vertex_normals, -mesh.vertex_normals, atol=1e-12)


def test_tetrahedron_laplacian_rows():
    L = build_uniform_laplacian(tetrahedron()).toarray()
    for row in L:
        assert sorted(row) == [-1, -1, -1, 3]


def test_two_triangle_laplacian_degrees():
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2], [1, 3, 2]])
    L = build_uniform_laplacian(mesh).toarray()
    np.testing.assert_array_equal(np.diag(L), [2, 3, 3, 2])


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 12), st.integers(3, 16))
def test_laplacian_symmetric_psd_zero_rows(n_lat, n_lon):
    L = build_uniform_laplacian(uv_sphere(n_lat, n_lon))
    assert np.all(L @ np.ones(L.shape[0]) == 0)
    dense = L.toarray()
    np.testing.assert_array_equal(dense, dense.T)
    assert np.linalg.eigvalsh(dense).min() >= -1e-9


def test_icosphere_counts():
    mesh = icosphere(1)
    assert mesh.n_vertices == 42 and mesh.n_faces == 80


def test_uv_sphere_is_closed_with_valid_uvs():
    mesh = uv_sphere(8, 16)
    edges = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]), 1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)
    assert mesh.uvs.min() >= 0 and mesh.uvs.max() <= 1
