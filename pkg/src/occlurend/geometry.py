"""Triangle meshes, vertex normals and the uniform graph Laplacian."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) int64
    uvs: np.ndarray | None = None  # (F, 3, 2) per-corner
    vertex_normals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.uvs is None:
            self.uvs = np.zeros((len(self.faces), 3, 2))
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64).reshape(-1, 3, 2)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")
        if self.uvs.shape[0] != self.faces.shape[0]:
            raise MeshError("uvs must be given per face corner")
        if not np.all(np.isfinite(self.uvs)):
            raise MeshError("non-finite uv coordinates")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return replace(self, vertices=np.array(vertices, dtype=np.float64), vertex_normals=None)

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def face_cross(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals; their length is twice the face area."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return np.cross(b - a, c - a)


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    cr = face_cross(mesh.vertices, mesh.faces)
    return cr / np.linalg.norm(cr, axis=1, keepdims=True)


def compute_vertex_normals(mesh: TriangleMesh) -> TriangleMesh:
    """Area-weighted average of incident face normals.

    Raises MeshError naming the first face whose area is below 1e-12.
    """
    cr = face_cross(mesh.vertices, mesh.faces)
    area = 0.5 * np.linalg.norm(cr, axis=1)
    bad = np.flatnonzero(area <= DEGENERATE_AREA)
    if bad.size:
        raise MeshError(f"degenerate face {int(bad[0])} (area {area[bad[0]]:.3g})")
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cr)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return replace(mesh, vertex_normals=acc / norm)


def mesh_edges(faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """Unique undirected edges (i < j) of a triangle list."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(e, axis=0)


def build_uniform_laplacian(mesh: TriangleMesh) -> sp.csr_matrix:
    """Combinatorial Laplacian: degree on the diagonal, -1 per 1-ring neighbour."""
    n = mesh.n_vertices
    e = mesh_edges(mesh.faces, n)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


# ---------------------------------------------------------------- primitives


def tetrahedron() -> TriangleMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, f)


def spherical_uv(p: np.ndarray) -> np.ndarray:
    """Longitude/latitude mapping; u = 0.5 faces +z, v = 0 at the +y pole."""
    p = p / np.linalg.norm(p, axis=-1, keepdims=True)
    u = (np.arctan2(p[..., 0], p[..., 2]) + np.pi) / (2 * np.pi)
    v = np.arccos(np.clip(p[..., 1], -1, 1)) / np.pi
    return np.stack([u, v], -1)


def icosphere(subdivisions: int = 1, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron; 1 subdivision gives 42 vertices."""
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(x, dtype=np.float64) / np.linalg.norm(x) for x in v]
    faces = [tuple(x) for x in f]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius
    F = np.array(faces, dtype=np.int64)
    uv = spherical_uv(V[F])
    # unwrap corners across the longitude seam, then clamp into the texture
    span = uv[:, :, 0].max(1) - uv[:, :, 0].min(1)
    seam = span > 0.5
    uu = uv[:, :, 0]
    uu[seam] = np.where(uu[seam] < 0.5, uu[seam] + 1.0, uu[seam])
    uv[:, :, 0] = np.clip(uu, 0.0, 1.0)
    return compute_vertex_normals(TriangleMesh(V, F, uv))


def uv_sphere(n_lat: int = 32, n_lon: int = 64, radius_fn=None) -> TriangleMesh:
    """Latitude/longitude sphere with shared vertices and per-corner UVs.

    ``radius_fn`` maps unit directions (K, 3) to radii (K,), which is how
    non-spherical star-shaped blobs are built.
    """
    rows = []
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        phi = 2 * np.pi * np.arange(n_lon) / n_lon - np.pi
        rows.append(np.stack([np.sin(theta) * np.sin(phi), np.full(n_lon, np.cos(theta)),
                              np.sin(theta) * np.cos(phi)], -1))
    dirs = np.concatenate([[[0.0, 1.0, 0.0]], *rows, [[0.0, -1.0, 0.0]]])
    top, bottom = 0, len(dirs) - 1

    def vid(i, j):  # ring i in 1..n_lat-1
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces, uvs = [], []
    for j in range(n_lon):
        u0, u1 = j / n_lon, (j + 1) / n_lon
        faces.append((top, vid(1, j), vid(1, j + 1)))
        uvs.append([((u0 + u1) / 2, 0.0), (u0, 1 / n_lat), (u1, 1 / n_lat)])
        for i in range(1, n_lat - 1):
            va, vb = i / n_lat, (i + 1) / n_lat
            faces.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)))
            uvs.append([(u0, va), (u0, vb), (u1, vb)])
            faces.append((vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)))
            uvs.append([(u0, va), (u1, vb), (u1, va)])
        faces.append((vid(n_lat - 1, j), bottom, vid(n_lat - 1, j + 1)))
        uvs.append([(u0, 1 - 1 / n_lat), ((u0 + u1) / 2, 1.0), (u1, 1 - 1 / n_lat)])
    radii = np.ones(len(dirs)) if radius_fn is None else np.asarray(radius_fn(dirs), dtype=np.float64)
    return compute_vertex_normals(TriangleMesh(dirs * radii[:, None], np.array(faces), np.array(uvs)))
