"""Triangle mesh container and the handful of whole-mesh quantities we need."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError


@dataclass
class TriangleMesh:
    """Indexed triangle soup. Watertight meshes orient faces outward."""

    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise DataError("face indices out of vertex range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise DataError("empty mesh has no AABB")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def volume(self) -> float:
        """Signed enclosed volume; positive for outward-oriented closed meshes."""
        tri = self.triangles()
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norm, 1e-300)

    def edge_counts(self) -> dict[tuple[int, int], list[int]]:
        """Undirected edge -> [forward uses, reverse uses]."""
        counts: dict[tuple[int, int], list[int]] = {}
        for a, b, c in self.faces:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (int(min(u, v)), int(max(u, v)))
                fwd = u < v
                slot = counts.setdefault(key, [0, 0])
                slot[0 if fwd else 1] += 1
        return counts

    def is_watertight(self) -> bool:
        """Every undirected edge used exactly twice, once in each direction."""
        if not len(self.faces):
            return False
        return all(slot == [1, 1] for slot in self.edge_counts().values())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edge_counts()) + self.n_faces

    def transformed(self, rotation: np.ndarray | None = None, translation=None, scale=None) -> "TriangleMesh":
        """Apply scale (per-axis), then rotation, then translation."""
        v = self.vertices
        if scale is not None:
            v = v * np.asarray(scale, dtype=np.float64)
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.faces.copy())


def concat_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    if not meshes:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))
