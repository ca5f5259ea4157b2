"""Oriented (yaw-only) 3D boxes: rotation, canonical alignment, exact IoU, NMS.

Box footprints rotate about +z only, so the volumetric IoU factorizes into
an exact convex polygon intersection in the xy plane times the z interval
overlap. The polygon intersection is Sutherland-Hodgman clipping; there is
no sampling anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


def wrap_angle(theta: float) -> float:
    """Wrap to [-pi, pi)."""
    return float(np.mod(theta + np.pi, 2.0 * np.pi) - np.pi)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class OrientedBox:
    center: np.ndarray  # (3,)
    scale: np.ndarray  # (3,) full extents, all > 0 for a proper box
    heading: float  # yaw about +z, in [-pi, pi)
    label: int = 0
    score: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.heading = wrap_angle(float(self.heading))

    def volume(self) -> float:
        return float(np.prod(self.scale))

    def footprint(self) -> np.ndarray:
        """(4, 2) xy corners in counter-clockwise order."""
        hx, hy = self.scale[0] / 2.0, self.scale[1] / 2.0
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = np.cos(self.heading), np.sin(self.heading)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def corners(self) -> np.ndarray:
        """(8, 3) world corners, bottom 4 then top 4."""
        foot = self.footprint()
        z0 = self.center[2] - self.scale[2] / 2.0
        z1 = self.center[2] + self.scale[2] / 2.0
        bottom = np.column_stack([foot, np.full(4, z0)])
        top = np.column_stack([foot, np.full(4, z1)])
        return np.vstack([bottom, top])

    def z_interval(self) -> tuple[float, float]:
        h = self.scale[2] / 2.0
        return float(self.center[2] - h), float(self.center[2] + h)


def canonical_align(points: np.ndarray, center, heading: float,
                    delta_rot: np.ndarray | None = None, delta_c=None) -> np.ndarray:
    """Map world points into a box's canonical frame with additive corrections.

    out = (R(heading)^-1 + delta_rot) @ (p - (center + delta_c)); the rotation
    correction is a literal matrix addition, not a composed rotation.
    """
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64).reshape(3)
    rot = rot_z(heading).T
    if delta_rot is not None:
        rot = rot + np.asarray(delta_rot, dtype=np.float64).reshape(3, 3)
    shift = center if delta_c is None else center + np.asarray(delta_c, dtype=np.float64).reshape(3)
    return (points - shift) @ rot.T


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip `subject` by convex CCW polygon `clip`."""
    output = subject
    n = len(clip)
    for i in range(n):
        if len(output) == 0:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        # keep the left side of the directed edge a->b (clip polygon is CCW)
        cross = edge[0] * (output[:, 1] - a[1]) - edge[1] * (output[:, 0] - a[0])
        inside = cross >= 0.0
        new_pts = []
        m = len(output)
        for j in range(m):
            k = (j + 1) % m
            p, q = output[j], output[k]
            if inside[j]:
                new_pts.append(p)
                if not inside[k]:
                    new_pts.append(_edge_intersect(p, q, a, edge))
            elif inside[k]:
                new_pts.append(_edge_intersect(p, q, a, edge))
        output = np.array(new_pts) if new_pts else np.zeros((0, 2))
    return output


def _edge_intersect(p: np.ndarray, q: np.ndarray, a: np.ndarray, edge: np.ndarray) -> np.ndarray:
    d = q - p
    denom = d[0] * edge[1] - d[1] * edge[0]
    if abs(denom) < 1e-300:
        return q
    t = ((a[0] - p[0]) * edge[1] - (a[1] - p[1]) * edge[0]) / denom
    return p + t * d


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact IoU of two yaw-oriented boxes; degenerate boxes give 0."""
    va, vb = a.volume(), b.volume()
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    za0, za1 = a.z_interval()
    zb0, zb1 = b.z_interval()
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter_poly = _clip_polygon(a.footprint(), b.footprint())
    inter_area = _polygon_area(inter_poly)
    inter = inter_area * dz
    union = va + vb - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)


def box_iou_axis_aligned(a: OrientedBox, b: OrientedBox) -> float:
    """IoU of the axis-aligned bounds of the two boxes (sensitivity toggle)."""
    ca = a.corners()
    cb = b.corners()
    lo = np.maximum(ca.min(axis=0), cb.min(axis=0))
    hi = np.minimum(ca.max(axis=0), cb.max(axis=0))
    if np.any(hi <= lo):
        return 0.0
    inter = float(np.prod(hi - lo))
    va = float(np.prod(ca.max(axis=0) - ca.min(axis=0)))
    vb = float(np.prod(cb.max(axis=0) - cb.min(axis=0)))
    union = va + vb - inter
    return inter / union if union > 0 else 0.0


def nms_3d(boxes: list[OrientedBox], iou_threshold: float, per_class: bool = False,
           iou_fn=box_iou) -> list[int]:
    """Greedy NMS by descending score, ties broken by lower index.

    Returns kept indices into `boxes`, in keep order. A box is suppressed
    when its IoU with an already kept box exceeds the threshold.
    """
    if not boxes:
        return []
    scores = np.array([b.score for b in boxes])
    order = np.lexsort((np.arange(len(boxes)), -scores))
    kept: list[int] = []
    for i in order:
        box = boxes[i]
        suppressed = False
        for j in kept:
            if per_class and boxes[j].label != box.label:
                continue
            if iou_fn(boxes[j], box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(int(i))
    return kept


def nearest_gt_centers(centers: np.ndarray, gt_centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each center: (index of nearest GT center, distance)."""
    centers = np.asarray(centers, dtype=np.float64)
    gt_centers = np.asarray(gt_centers, dtype=np.float64)
    if len(gt_centers) == 0:
        raise DataError("no ground-truth centers; scenes must contain at least one object")
    d2 = ((centers[:, None, :] - gt_centers[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return idx, np.sqrt(d2[np.arange(len(centers)), idx])
