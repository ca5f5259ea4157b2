"""Eight parametric shape families, each emitted in a canonical frame.

Every sampled mesh is watertight, outward oriented, and normalized so its
bounding box is exactly the centered unit cube; world size and aspect come
entirely from the per-axis scale applied at placement time. Family variety
therefore lives in proportions that survive per-axis normalization (wall
thicknesses, hole radii, taper ratios), not in overall dimensions.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..geometry import TriangleMesh, concat_meshes
from ..meshing import normalize_to_unit_aabb

FAMILIES = ("box", "cylinder", "bracket", "table", "ring", "cone", "cross", "channel")

_SIDES = 24  # round profiles


def triangulate_polygon(poly: np.ndarray) -> np.ndarray:
    """Ear clipping for a simple CCW polygon; returns (n-2, 3) vertex indices."""
    poly = np.asarray(poly, dtype=np.float64)
    n = len(poly)
    if n < 3:
        raise DataError("polygon needs at least 3 vertices")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    signed2 = sum(cross(poly[0], poly[i], poly[i + 1]) for i in range(1, n - 1))
    if signed2 <= 0:
        raise DataError("polygon must wind counter-clockwise")
    idx = list(range(n))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 2 * n * n:
            raise DataError("polygon is not simple; ear clipping failed")
        clipped = False
        for pos in range(len(idx)):
            a = poly[idx[pos - 1]]
            b = poly[idx[pos]]
            c = poly[idx[(pos + 1) % len(idx)]]
            if cross(a, b, c) <= 1e-12:
                continue  # reflex or collinear corner, not an ear
            blocked = False
            for other in idx:
                if other in (idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]):
                    continue
                p = poly[other]
                if (cross(a, b, p) >= -1e-12 and cross(b, c, p) >= -1e-12
                        and cross(c, a, p) >= -1e-12):
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]))
            del idx[pos]
            clipped = True
            break
        if not clipped:
            raise DataError("polygon is not simple; no ear found")
    tris.append(tuple(idx))
    return np.asarray(tris, dtype=np.int64)


def extrude_polygon(poly: np.ndarray, z0: float, z1: float) -> TriangleMesh:
    """Prism over a simple CCW polygon, caps at z0 and z1, outward oriented."""
    poly = np.asarray(poly, dtype=np.float64)
    n = len(poly)
    bottom = np.column_stack([poly, np.full(n, float(z0))])
    top = np.column_stack([poly, np.full(n, float(z1))])
    verts = np.vstack([bottom, top])
    cap = triangulate_polygon(poly)
    faces = [cap[:, ::-1], cap + n]  # bottom flipped to face -z, top faces +z
    i = np.arange(n)
    j = (i + 1) % n
    side = np.stack([
        np.stack([i, j, j + n], axis=1),
        np.stack([i, j + n, i + n], axis=1),
    ]).reshape(-1, 3)
    faces.append(side)
    return TriangleMesh(verts, np.vstack(faces))


def _regular_polygon(radius: float, sides: int = _SIDES) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(sides) / sides
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def _annulus_prism(r_outer: float, r_inner: float, z0: float, z1: float,
                   sides: int = _SIDES) -> TriangleMesh:
    outer = _regular_polygon(r_outer, sides)
    inner = _regular_polygon(r_inner, sides)
    ob = np.column_stack([outer, np.full(sides, z0)])
    ot = np.column_stack([outer, np.full(sides, z1)])
    ib = np.column_stack([inner, np.full(sides, z0)])
    it = np.column_stack([inner, np.full(sides, z1)])
    verts = np.vstack([ob, ot, ib, it])  # offsets 0, s, 2s, 3s
    s = sides
    i = np.arange(s)
    j = (i + 1) % s
    faces = []
    # top annulus (+z): outer_i -> outer_j -> inner_j -> inner_i is CCW from above
    faces.append(np.stack([i + s, j + s, j + 3 * s], axis=1))
    faces.append(np.stack([i + s, j + 3 * s, i + 3 * s], axis=1))
    # bottom annulus (-z): reversed
    faces.append(np.stack([i, j + 2 * s, j], axis=1))
    faces.append(np.stack([i, i + 2 * s, j + 2 * s], axis=1))
    # outer wall faces outward
    faces.append(np.stack([i, j, j + s], axis=1))
    faces.append(np.stack([i, j + s, i + s], axis=1))
    # inner wall faces into the hole
    faces.append(np.stack([j + 2 * s, i + 2 * s, i + 3 * s], axis=1))
    faces.append(np.stack([j + 2 * s, i + 3 * s, j + 3 * s], axis=1))
    return TriangleMesh(verts, np.vstack(faces))


def _frustum(r_bottom: float, r_top: float, z0: float, z1: float,
             sides: int = _SIDES) -> TriangleMesh:
    bottom = _regular_polygon(r_bottom, sides)
    top = _regular_polygon(r_top, sides)
    vb = np.column_stack([bottom, np.full(sides, z0)])
    vt = np.column_stack([top, np.full(sides, z1)])
    verts = np.vstack([vb, vt])
    cap = triangulate_polygon(bottom)
    i = np.arange(sides)
    j = (i + 1) % sides
    faces = [
        cap[:, ::-1],
        triangulate_polygon(top) + sides,
        np.stack([i, j, j + sides], axis=1),
        np.stack([i, j + sides, i + sides], axis=1),
    ]
    return TriangleMesh(verts, np.vstack(faces))


def _box() -> TriangleMesh:
    return extrude_polygon(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
                           -0.5, 0.5)


def _cylinder(rng) -> TriangleMesh:
    return extrude_polygon(_regular_polygon(0.5), -0.5, 0.5)


def _bracket(rng) -> TriangleMesh:
    a = rng.uniform(0.35, 0.65)  # arm thicknesses of the L outline
    b = rng.uniform(0.35, 0.65)
    poly = np.array([[0, 0], [1, 0], [1, b], [a, b], [a, 1], [0, 1]], dtype=np.float64)
    return extrude_polygon(poly, 0.0, 1.0)


def _table(rng) -> TriangleMesh:
    top_t = rng.uniform(0.08, 0.15)
    leg_w = rng.uniform(0.08, 0.15)
    inset = rng.uniform(0.02, 0.10)
    gap = 0.002  # keeps leg tops off the slab plane so ray parity stays clean
    slab = extrude_polygon(
        np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64),
        1.0 - top_t, 1.0)
    legs = []
    for cx, cy in ((inset, inset), (1 - inset - leg_w, inset),
                   (inset, 1 - inset - leg_w), (1 - inset - leg_w, 1 - inset - leg_w)):
        poly = np.array([[cx, cy], [cx + leg_w, cy], [cx + leg_w, cy + leg_w], [cx, cy + leg_w]])
        legs.append(extrude_polygon(poly, 0.0, 1.0 - top_t - gap))
    return concat_meshes([slab] + legs)


def _ring(rng) -> TriangleMesh:
    inner = 0.5 * rng.uniform(0.3, 0.7)
    return _annulus_prism(0.5, inner, -0.5, 0.5)


def _cone(rng) -> TriangleMesh:
    taper = rng.uniform(0.25, 0.6)
    return _frustum(0.5, 0.5 * taper, -0.5, 0.5)


def _cross(rng) -> TriangleMesh:
    w = rng.uniform(0.15, 0.3)  # arm half-width
    poly = np.array([
        [w, -w], [0.5, -w], [0.5, w], [w, w], [w, 0.5], [-w, 0.5],
        [-w, w], [-0.5, w], [-0.5, -w], [-w, -w], [-w, -0.5], [w, -0.5],
    ], dtype=np.float64)
    return extrude_polygon(poly, 0.0, 1.0)


def _channel(rng) -> TriangleMesh:
    w = rng.uniform(0.3, 0.6)
    d = rng.uniform(0.4, 0.75)
    lo = 0.5 - w / 2.0
    hi = 0.5 + w / 2.0
    poly = np.array([
        [0, 0], [1, 0], [1, 1], [hi, 1], [hi, 1 - d], [lo, 1 - d], [lo, 1], [0, 1],
    ], dtype=np.float64)
    return extrude_polygon(poly, 0.0, 1.0)


_BUILDERS = {
    "box": lambda rng: _box(),
    "cylinder": _cylinder,
    "bracket": _bracket,
    "table": _table,
    "ring": _ring,
    "cone": _cone,
    "cross": _cross,
    "channel": _channel,
}


def sample_shape(family: str, rng: np.random.Generator) -> TriangleMesh:
    """Draw one canonical (unit-cube normalized) mesh from a family."""
    if family not in _BUILDERS:
        raise DataError(f"unknown shape family {family!r}")
    return normalize_to_unit_aabb(_BUILDERS[family](rng))
