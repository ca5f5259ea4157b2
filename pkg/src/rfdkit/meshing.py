"""Iso-surface extraction from scalar occupancy fields.

The 256-entry cube table is generated at import time instead of being
transcribed: each cube is split into the six tetrahedra of its Freudenthal
decomposition and every tetrahedron is triangulated by its own sign pattern.
The decomposition tiles space consistently (a shared cube face is split along
the same diagonal from both sides), so the extracted surface is watertight by
construction with no ambiguous cases to patch. Crossing vertices sit on cube
edges, face diagonals, and the body diagonal; they are welded globally by the
lattice ids of their corner pair.

Values strictly above `level` are inside; triangle winding puts the outward
normal on the low-value side.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .errors import DataError, ShapeMismatchError
from .geometry import TriangleMesh, rot_z

# Canonical shapes span [-0.5, 0.5]^3 exactly; fields are sampled over a
# padded domain so a shape that fills its whole box still has an outside and
# the extracted surface can close across the domain boundary.
FIELD_HALF = 0.55

_CORNER_OFF = np.array(
    [[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64
)
_FACE_NBRS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.int64
)


def _freudenthal_tets() -> list[list[int]]:
    tets = []
    for perm in permutations(range(3)):
        v = 0
        tet = [0]
        for axis in perm:
            v |= 1 << axis
            tet.append(v)
        tets.append(tet)
    return tets


def _tet_triangles(tet: list[int], inside: np.ndarray) -> list[list[tuple[int, int]]]:
    ins = [c for c in tet if inside[c]]
    outs = [c for c in tet if not inside[c]]
    if not ins or not outs:
        return []
    if len(ins) == 1:
        a = ins[0]
        tris = [[(a, outs[0]), (a, outs[1]), (a, outs[2])]]
    elif len(ins) == 3:
        d = outs[0]
        tris = [[(ins[0], d), (ins[1], d), (ins[2], d)]]
    else:
        a, b = ins
        c, d = outs
        tris = [[(a, c), (a, d), (b, d)], [(a, c), (b, d), (b, c)]]
    coords = _CORNER_OFF.astype(np.float64)
    toward_out = coords[outs].mean(axis=0) - coords[ins].mean(axis=0)
    oriented = []
    for tri in tris:
        p = np.array([(coords[x] + coords[y]) / 2.0 for x, y in tri])
        normal = np.cross(p[1] - p[0], p[2] - p[0])
        if float(np.dot(normal, toward_out)) < 0.0:
            tri = [tri[0], tri[2], tri[1]]
        oriented.append(tri)
    return oriented


def _build_case_table() -> list[np.ndarray]:
    tets = _freudenthal_tets()
    table = []
    for case in range(256):
        inside = np.array([(case >> c) & 1 for c in range(8)], dtype=bool)
        tris = []
        for tet in tets:
            tris.extend(_tet_triangles(tet, inside))
        table.append(np.asarray(tris, dtype=np.int8).reshape(-1, 3, 2))
    return table


_CASE_TABLE = _build_case_table()


def _triangulate_cells(cells: np.ndarray, values: np.ndarray, corner_dims, origin,
                       spacing: float, level: float) -> TriangleMesh:
    """Triangulate the given cells of a corner-value lattice.

    `values` is the flat corner array indexed by (i * ny + j) * nz + k with
    corner_dims = (nx, ny, nz); every corner of every listed cell must be set.
    """
    nx, ny, nz = corner_dims
    origin = np.asarray(origin, dtype=np.float64)
    if len(cells) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    corner_ids = cells[:, None, :] + _CORNER_OFF[None, :, :]  # (n, 8, 3)
    flat = (corner_ids[..., 0] * ny + corner_ids[..., 1]) * nz + corner_ids[..., 2]
    vals = values[flat]  # (n, 8)
    case = ((vals > level).astype(np.int64) << np.arange(8)).sum(axis=1)
    key_parts = []
    for c in np.unique(case):
        tab = _CASE_TABLE[c]
        if len(tab) == 0:
            continue
        sel = np.flatnonzero(case == c)
        ga = flat[sel][:, tab[:, :, 0]]  # (m, t, 3)
        gb = flat[sel][:, tab[:, :, 1]]
        lo = np.minimum(ga, gb)
        hi = np.maximum(ga, gb)
        key_parts.append((lo.astype(np.int64) * (nx * ny * nz) + hi).reshape(-1, 3))
    if not key_parts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    face_keys = np.concatenate(key_parts, axis=0)
    uniq, inverse = np.unique(face_keys.reshape(-1), return_inverse=True)
    lo = uniq // (nx * ny * nz)
    hi = uniq % (nx * ny * nz)

    def corner_pos(flat_ids):
        k = flat_ids % nz
        j = (flat_ids // nz) % ny
        i = flat_ids // (ny * nz)
        return origin + spacing * np.stack([i, j, k], axis=1).astype(np.float64)

    va = values[lo]
    vb = values[hi]
    t = ((level - va) / (vb - va))[:, None]
    verts = corner_pos(lo) + t * (corner_pos(hi) - corner_pos(lo))
    return TriangleMesh(verts, inverse.reshape(-1, 3).astype(np.int64))


def marching_cubes(values: np.ndarray, level: float, origin=(-0.5, -0.5, -0.5),
                   spacing: float = 1.0) -> TriangleMesh:
    """Extract the `value > level` boundary surface from a dense corner grid."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 2:
        raise ShapeMismatchError(f"corner grid must be 3-D with >= 2 samples per axis, got {values.shape}")
    nx, ny, nz = values.shape
    cx, cy, cz = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    cells = np.stack([cx, cy, cz], axis=-1).reshape(-1, 3)
    return _triangulate_cells(cells, values.reshape(-1), values.shape, origin, spacing, level)


class _CornerField:
    """Lazily evaluated corner lattice over an axis-aligned cube domain."""

    def __init__(self, evaluate, resolution: int, lo: float, hi: float):
        self.evaluate = evaluate
        self.resolution = resolution
        self.lo = lo
        self.spacing = (hi - lo) / resolution
        self.n1 = resolution + 1
        self.values = np.full(self.n1 ** 3, np.nan)
        self.known = np.zeros(self.n1 ** 3, dtype=bool)
        self.n_evaluations = 0

    def flat(self, corner_ids: np.ndarray) -> np.ndarray:
        return (corner_ids[..., 0] * self.n1 + corner_ids[..., 1]) * self.n1 + corner_ids[..., 2]

    def ensure(self, corner_ids: np.ndarray) -> None:
        flat = np.unique(self.flat(corner_ids).reshape(-1))
        missing = flat[~self.known[flat]]
        if not len(missing):
            return
        k = missing % self.n1
        j = (missing // self.n1) % self.n1
        i = missing // (self.n1 * self.n1)
        pts = self.lo + self.spacing * np.stack([i, j, k], axis=1).astype(np.float64)
        self.values[missing] = np.asarray(self.evaluate(pts), dtype=np.float64).reshape(-1)
        self.known[missing] = True
        self.n_evaluations += len(missing)

    def mixed(self, cells: np.ndarray, stride: int, level: float) -> np.ndarray:
        corner_ids = cells[:, None, :] * stride + _CORNER_OFF[None, :, :] * stride
        vals = self.values[self.flat(corner_ids)]
        inside = (vals > level).sum(axis=1)
        return (inside > 0) & (inside < 8)


def dense_field_extract(evaluate, resolution: int, level: float = 0.5,
                        lo: float = -FIELD_HALF, hi: float = FIELD_HALF) -> tuple[TriangleMesh, int]:
    """Evaluate every corner of a `resolution`^3 cell grid and extract."""
    field = _CornerField(evaluate, resolution, lo, hi)
    ids = np.stack(np.meshgrid(*([np.arange(field.n1)] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
    field.ensure(ids)
    mesh = marching_cubes(field.values.reshape(field.n1, field.n1, field.n1), level,
                          origin=(lo, lo, lo), spacing=field.spacing)
    return mesh, field.n_evaluations


def mise_extract(evaluate, level: float = 0.5, coarse: int = 16, fine: int = 128,
                 lo: float = -FIELD_HALF, hi: float = FIELD_HALF) -> tuple[TriangleMesh, int]:
    """Multi-resolution extraction: refine sign-mixed cells, then flood.

    Starts from a dense `coarse`^3 pass, repeatedly subdivides mixed cells
    until `fine`, then grows the active set across cell faces until no new
    mixed cell appears. The flood closes the surface even where it wanders
    through regions the coarse pass saw as uniform; only components entirely
    invisible at `coarse` resolution are missed. Returns the mesh and the
    number of field evaluations spent.
    """
    if fine % coarse != 0 or coarse < 1:
        raise DataError(f"fine resolution {fine} must be a multiple of coarse {coarse}")
    steps = fine // coarse
    if steps & (steps - 1):
        raise DataError(f"fine/coarse ratio must be a power of two, got {steps}")
    field = _CornerField(evaluate, fine, lo, hi)

    d = coarse
    cells = np.stack(np.meshgrid(*([np.arange(d)] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
    while True:
        stride = fine // d
        field.ensure(cells[:, None, :] * stride + _CORNER_OFF[None, :, :] * stride)
        mixed = field.mixed(cells, stride, level)
        if d == fine:
            break
        cells = (cells[mixed][:, None, :] * 2 + _CORNER_OFF[None, :, :]).reshape(-1, 3)
        d *= 2

    tested = np.zeros((fine, fine, fine), dtype=bool)
    tested[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    collected = [cells[mixed]]
    frontier = cells[mixed]
    while len(frontier):
        nbrs = (frontier[:, None, :] + _FACE_NBRS[None, :, :]).reshape(-1, 3)
        ok = np.all((nbrs >= 0) & (nbrs < fine), axis=1)
        nbrs = np.unique(nbrs[ok], axis=0)
        fresh = nbrs[~tested[nbrs[:, 0], nbrs[:, 1], nbrs[:, 2]]]
        if not len(fresh):
            break
        tested[fresh[:, 0], fresh[:, 1], fresh[:, 2]] = True
        field.ensure(fresh[:, None, :] + _CORNER_OFF[None, :, :])
        newly_mixed = field.mixed(fresh, 1, level)
        frontier = fresh[newly_mixed]
        collected.append(frontier)

    active = np.concatenate(collected, axis=0)
    mesh = _triangulate_cells(active, field.values, (field.n1,) * 3,
                              (lo, lo, lo), field.spacing, level)
    return mesh, field.n_evaluations


def normalize_to_unit_aabb(mesh: TriangleMesh) -> TriangleMesh:
    """Rescale per axis so the bounding box becomes exactly [-0.5, 0.5]^3."""
    if mesh.n_vertices == 0:
        return mesh
    lo, hi = mesh.aabb()
    extent = np.maximum(hi - lo, 1e-12)
    verts = (mesh.vertices - (lo + hi) / 2.0) / extent
    return TriangleMesh(verts, mesh.faces)


def mesh_to_world(mesh: TriangleMesh, center, heading: float, scale) -> TriangleMesh:
    """Place a canonical-frame mesh into the world: rotate the scaled copy."""
    return mesh.transformed(rotation=rot_z(heading),
                            translation=np.asarray(center, dtype=np.float64),
                            scale=np.asarray(scale, dtype=np.float64))
