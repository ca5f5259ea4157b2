"""Scene layout, scan simulation, and occupancy ground truth.

A scene is a handful of shapes resting on the floor plane with disjoint
oriented boxes. The simulated scan mixes visibility-filtered object surface
points with floor points and a little volumetric clutter; visibility is an
exact segment test against every object triangle from a ring of sensor
viewpoints, which leaves the realistic self-occlusion holes that make the
reconstruction problem non-trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..geometry import OrientedBox, TriangleMesh, box_iou, concat_meshes, point_in_mesh
from ..meshing import FIELD_HALF, mesh_to_world
from .shapes import FAMILIES, sample_shape

ROOM_HALF = 1.4  # object centers stay inside this square
FLOOR_HALF = 1.4
VIEW_RADIUS = 2.25
VIEW_HEIGHT = 2.5
SCAN_MIX = (0.60, 0.38, 0.02)  # object surface, floor, clutter

_WORLD_SCALE_RANGES = {
    "box": ((0.15, 0.6), (0.15, 0.6), (0.15, 0.6)),
    "cylinder": ((0.1, 0.5), "same_xy", (0.15, 0.7)),
    "bracket": ((0.15, 0.5), (0.15, 0.5), (0.15, 0.5)),
    "table": ((0.5, 1.0), (0.5, 1.0), (0.4, 0.8)),
    "ring": ((0.15, 0.45), "same_xy", (0.03, 0.12)),
    "cone": ((0.12, 0.5), "same_xy", (0.15, 0.6)),
    "cross": ((0.15, 0.5), (0.15, 0.5), (0.15, 0.5)),
    "channel": ((0.15, 0.6), (0.15, 0.6), (0.15, 0.6)),
}


@dataclass
class SceneObject:
    family: str
    label: int
    mesh: TriangleMesh  # canonical, unit-cube normalized
    center: np.ndarray
    scale: np.ndarray
    heading: float
    instance_id: int  # 1-based; 0 is background

    def world_mesh(self) -> TriangleMesh:
        return mesh_to_world(self.mesh, self.center, self.heading, self.scale)

    def world_box(self) -> OrientedBox:
        return OrientedBox(self.center, self.scale, self.heading, label=self.label)


@dataclass
class Scene:
    objects: list[SceneObject] = field(default_factory=list)


def _sample_world_scale(family: str, rng: np.random.Generator) -> np.ndarray:
    rx, ry, rz = _WORLD_SCALE_RANGES[family]
    sx = rng.uniform(*rx)
    sy = sx if ry == "same_xy" else rng.uniform(*ry)
    sz = rng.uniform(*rz)
    return np.array([sx, sy, sz])


def generate_scene(rng: np.random.Generator, n_objects: tuple[int, int] = (3, 8)) -> Scene:
    """Rejection-sample non-overlapping resting placements."""
    k = int(rng.integers(n_objects[0], n_objects[1] + 1))
    scene = Scene()
    for i in range(k):
        for _ in range(200):
            family = FAMILIES[int(rng.integers(len(FAMILIES)))]
            mesh = sample_shape(family, rng)
            scale = _sample_world_scale(family, rng)
            heading = float(rng.uniform(-np.pi, np.pi))
            cx, cy = rng.uniform(-ROOM_HALF, ROOM_HALF, 2)
            center = np.array([cx, cy, scale[2] / 2.0])
            box = OrientedBox(center, scale, heading, label=FAMILIES.index(family))
            if all(box_iou(box, other.world_box()) == 0.0 for other in scene.objects):
                scene.objects.append(SceneObject(family, FAMILIES.index(family), mesh,
                                                 center, scale, heading, instance_id=i + 1))
                break
        else:
            raise DataError("could not place a non-overlapping object in 200 attempts")
    return scene


def sample_surface_points(mesh: TriangleMesh, n: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples; returns (points, face index per point)."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise DataError("mesh has no surface area to sample")
    faces = rng.choice(len(areas), size=n, p=areas / total)
    tri = mesh.triangles()[faces]
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
    return pts, faces


def visibility_filter(points: np.ndarray, occluders: list[TriangleMesh],
                      viewpoints: np.ndarray) -> np.ndarray:
    """True where a point is reachable from at least one viewpoint.

    Exact segment-triangle intersection; hits close to the far endpoint are
    ignored so surface samples do not occlude themselves.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tris = [m.triangles() for m in occluders if m.n_faces]
    if not tris:
        return np.ones(len(points), dtype=bool)
    tri = np.concatenate(tris, axis=0)
    a = tri[:, 0]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    visible = np.zeros(len(points), dtype=bool)
    for view in np.asarray(viewpoints, dtype=np.float64).reshape(-1, 3):
        idx = np.flatnonzero(~visible)
        if not len(idx):
            break
        occluded = np.zeros(len(idx), dtype=bool)
        for plo in range(0, len(idx), 4096):
            rows = idx[plo:plo + 4096]
            d = points[rows] - view  # segment, t in [0, 1]
            blocked = np.zeros(len(rows), dtype=bool)
            for tlo in range(0, len(tri), 256):
                aa = a[tlo:tlo + 256]
                ee1 = e1[tlo:tlo + 256]
                ee2 = e2[tlo:tlo + 256]
                h = np.cross(d[:, None, :], ee2[None, :, :])
                det = (h * ee1[None, :, :]).sum(-1)
                safe = np.abs(det) > 1e-14
                inv = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
                s = (view - aa)[None, :, :]
                u = (s * h).sum(-1) * inv
                q = np.cross(s, ee1[None, :, :])
                v = (q * d[:, None, :]).sum(-1) * inv
                t = (q * ee2[None, :, :]).sum(-1) * inv
                hit = safe & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-6) & (t < 1.0 - 1e-4)
                blocked |= hit.any(axis=1)
            occluded[plo:plo + 4096] = blocked
        visible[idx[~occluded]] = True
    return visible


def _ring_viewpoints(rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.0, 2.0 * np.pi / 3.0)
    ang = base + np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    return np.column_stack([VIEW_RADIUS * np.cos(ang), VIEW_RADIUS * np.sin(ang),
                            np.full(3, VIEW_HEIGHT)])


def _fill_quota(draw, quota: int) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate (points, ids) from `draw(n)` rounds until `quota` survive."""
    pts_parts, id_parts = [], []
    have = 0
    stalls = 0
    for _ in range(60):
        if have >= quota:
            break
        pts, ids = draw(max(2 * (quota - have), 2048))
        if len(pts) == 0:
            stalls += 1
            if stalls >= 5:
                break
            continue
        stalls = 0
        pts_parts.append(pts)
        id_parts.append(ids)
        have += len(pts)
    if have < quota:
        raise DataError("scan starved: too little visible surface for the point budget")
    pts = np.concatenate(pts_parts)[:quota]
    ids = np.concatenate(id_parts)[:quota]
    return pts, ids


def simulate_partial_scan(scene: Scene, n_points: int, rng: np.random.Generator,
                          mix: tuple[float, float, float] = SCAN_MIX) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one scan: returns exactly n_points (points, instance ids)."""
    if not scene.objects:
        raise DataError("cannot scan an empty scene")
    n_obj = int(round(mix[0] * n_points))
    n_floor = int(round(mix[1] * n_points))
    n_clutter = n_points - n_obj - n_floor
    if min(n_obj, n_floor, n_clutter) < 0:
        raise DataError(f"invalid scan mix {mix}")
    world_meshes = [o.world_mesh() for o in scene.objects]
    union = concat_meshes(world_meshes)
    face_owner = np.concatenate([
        np.full(m.n_faces, o.instance_id, dtype=np.int32)
        for m, o in zip(world_meshes, scene.objects)
    ])
    views = _ring_viewpoints(rng)

    def draw_objects(n):
        pts, faces = sample_surface_points(union, n, rng)
        keep = visibility_filter(pts, world_meshes, views)
        return pts[keep], face_owner[faces[keep]]

    def draw_floor(n):
        xy = rng.uniform(-FLOOR_HALF, FLOOR_HALF, size=(n, 2))
        pts = np.column_stack([xy, np.zeros(n)])
        keep = visibility_filter(pts, world_meshes, views)
        return pts[keep], np.zeros(keep.sum(), dtype=np.int32)

    obj_pts, obj_ids = _fill_quota(draw_objects, n_obj)
    if n_obj and len(obj_pts) < n_points / 10:
        raise DataError("scan starved: visible object surface below a tenth of the budget")
    floor_pts, floor_ids = _fill_quota(draw_floor, n_floor)
    clutter = np.column_stack([
        rng.uniform(-FLOOR_HALF, FLOOR_HALF, size=(n_clutter, 2)),
        rng.uniform(0.0, 1.0, size=n_clutter),
    ])
    points = np.concatenate([obj_pts, floor_pts, clutter], axis=0)
    ids = np.concatenate([obj_ids, floor_ids, np.zeros(n_clutter, dtype=np.int32)])
    order = rng.permutation(n_points)
    return points[order], ids[order]


def sample_occupancy_gt(mesh: TriangleMesh, rng: np.random.Generator,
                        n_inside: int = 1024, n_outside: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Balanced inside/outside query points over the padded canonical cube.

    Queries span the field domain (half-width FIELD_HALF), which is wider
    than the shape frame so even a cube-filling shape has an outside. The
    observed inside rate is cross-checked against the mesh volume so a broken
    containment test cannot silently poison the training labels.
    """
    volume = mesh.volume()
    if not 0.01 < volume <= 1.0 + 1e-9:
        raise DataError(f"canonical mesh volume {volume:.4f} outside sane range")
    expected = volume / (2.0 * FIELD_HALF) ** 3
    inside_parts, outside_parts = [], []
    n_in = n_out = hits = drawn = 0
    for _ in range(200):
        if n_in >= n_inside and n_out >= n_outside:
            break
        batch = rng.uniform(-FIELD_HALF, FIELD_HALF, size=(4096, 3))
        inside = point_in_mesh(batch, mesh)
        hits += int(inside.sum())
        drawn += len(batch)
        if n_in < n_inside:
            inside_parts.append(batch[inside])
            n_in += int(inside.sum())
        if n_out < n_outside:
            outside_parts.append(batch[~inside])
            n_out += int((~inside).sum())
    if n_in < n_inside or n_out < n_outside:
        raise DataError("occupancy sampling failed to reach the requested counts")
    rate = hits / drawn
    slack = 6.0 * np.sqrt(expected * (1.0 - expected) / drawn) + 0.01
    if abs(rate - expected) > slack:
        raise DataError(
            f"containment rate {rate:.4f} disagrees with mesh volume share {expected:.4f}")
    pts = np.concatenate([np.concatenate(inside_parts)[:n_inside],
                          np.concatenate(outside_parts)[:n_outside]])
    labels = np.concatenate([np.ones(n_inside, dtype=np.float32),
                             np.zeros(n_outside, dtype=np.float32)])
    order = rng.permutation(len(pts))
    return pts[order], labels[order]
