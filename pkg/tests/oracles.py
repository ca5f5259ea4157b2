"""Independent reference implementations used to check the library.

Everything here is deliberately written the slow, obvious way (full distance
matrices, Monte Carlo estimates) so it shares no code path with the package.
"""

import numpy as np

from rfdkit.geometry import OrientedBox, TriangleMesh, rot_z


def unit_cube_mesh() -> TriangleMesh:
    v = np.array(
        [[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)],
        dtype=np.float64,
    )
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),
        (0, 4, 5, 1), (2, 3, 7, 6),
        (0, 2, 6, 4), (1, 5, 7, 3),
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def uv_sphere_mesh(radius: float = 0.4, stacks: int = 24, slices: int = 48) -> TriangleMesh:
    """Watertight UV sphere centered at the origin, outward oriented."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        z = radius * np.cos(phi)
        rr = radius * np.sin(phi)
        for j in range(slices):
            ang = 2.0 * np.pi * j / slices
            verts.append((rr * np.cos(ang), rr * np.sin(ang), z))
    verts.append((0.0, 0.0, -radius))
    top, bottom = 0, len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * slices + (j % slices)

    faces = []
    for j in range(slices):
        faces.append((top, ring(1, j), ring(1, j + 1)))
        faces.append((bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)))
    for i in range(1, stacks - 1):
        for j in range(slices):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    mesh = TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))
    if mesh.volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def points_in_box(points: np.ndarray, box: OrientedBox) -> np.ndarray:
    local = (points - box.center) @ rot_z(box.heading)
    return np.all(np.abs(local) <= box.scale / 2.0 + 1e-12, axis=1)


def mc_box_iou(a: OrientedBox, b: OrientedBox, n: int, rng: np.random.Generator) -> float:
    """Monte Carlo IoU over the AABB that covers both boxes."""
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 3))
    in_a = points_in_box(pts, a)
    in_b = points_in_box(pts, b)
    either = int(np.count_nonzero(in_a | in_b))
    if either == 0:
        return 0.0
    return int(np.count_nonzero(in_a & in_b)) / either


def greedy_fps_oracle(points: np.ndarray, k: int) -> np.ndarray:
    """Max-min farthest point selection with a full distance matrix."""
    points = np.asarray(points, dtype=np.float64)
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    start = int(np.lexsort((points[:, 2], points[:, 1], points[:, 0]))[0])
    chosen = [start]
    mind = d[start].copy()
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, d[nxt])
    return np.asarray(chosen, dtype=np.int64)


def brute_ball(points: np.ndarray, center, radius: float) -> np.ndarray:
    out = []
    center = np.asarray(center, dtype=np.float64)
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        if float(((p - center) ** 2).sum()) <= radius * radius:
            out.append(i)
    return np.asarray(out, dtype=np.int64)
