"""Point sampling and grouping: farthest point sampling and ball queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

_CHUNK = 64  # centers per distance-matrix chunk, bounds memory at ~64 x N floats


def _lexmin_index(points: np.ndarray) -> int:
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return int(order[0])


def farthest_point_sample(points: np.ndarray, k: int, start: int | str = "lexmin") -> np.ndarray:
    """Greedy max-min subsampling; returns k indices.

    The first index is either given or anchored to the lexicographically
    smallest point, which makes the selected *positions* independent of the
    input ordering. k = N returns a permutation of all indices.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise DataError(f"farthest_point_sample needs 1 <= k <= {n}, got k={k}")
    first = _lexmin_index(points) if start == "lexmin" else int(start)
    selected = np.empty(k, dtype=np.int64)
    selected[0] = first
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))  # ties resolve to the first index
        selected[i] = nxt
        cand = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(d2, cand, out=d2)
    return selected


def ball_query(points: np.ndarray, center, radius: float) -> np.ndarray:
    """Ascending indices of points within `radius` of `center` (inclusive)."""
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64).reshape(3)
    d2 = ((points - center) ** 2).sum(axis=1)
    return np.flatnonzero(d2 <= radius * radius)


@dataclass
class PointCluster:
    """Fixed-size neighborhood around a center.

    Exactly `m` rows; when fewer points fall in the ball the indices cycle
    (deterministic resample with replacement) and `valid` marks the original
    rows. An empty neighborhood is flagged rather than an error.
    """

    center: np.ndarray  # (3,)
    points: np.ndarray  # (m, 3) world coordinates
    indices: np.ndarray  # (m,) into the source cloud, -1 when empty
    valid: np.ndarray  # (m,) bool, False on padded/duplicated rows

    @property
    def empty(self) -> bool:
        return not bool(self.valid.any())

    @property
    def n_found(self) -> int:
        return int(self.valid.sum())


def _order_canonical(points: np.ndarray, idx: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Sort neighborhood by (distance, x, y, z) and drop exact duplicate positions.

    This ordering makes downstream truncation insensitive to both input
    permutation and point duplication (a duplicated cloud selects the same
    positions), which plain index order is not once a neighborhood overflows m.
    """
    p = points[idx]
    d2 = ((p - center) ** 2).sum(axis=1)
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0], d2))
    p_sorted = p[order]
    keep = np.ones(len(order), dtype=bool)
    if len(order) > 1:
        dup = np.all(p_sorted[1:] == p_sorted[:-1], axis=1)
        keep[1:] = ~dup
    return idx[order[keep]]


def ball_query_group(points: np.ndarray, centers: np.ndarray, radius: float, m: int,
                     order: str = "index") -> list[PointCluster]:
    """Group up to m points within `radius` of each center.

    order "index": keep the first m by index (the storage contract);
    order "canonical": distance/lexicographic ordering with exact-duplicate
    positions removed (used inside the backbone, see _order_canonical).
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if m < 1:
        raise DataError(f"cluster size must be >= 1, got {m}")
    r2 = radius * radius
    clusters: list[PointCluster] = []
    for lo in range(0, len(centers), _CHUNK):
        chunk = centers[lo : lo + _CHUNK]
        d2 = ((chunk[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        for row, center in enumerate(chunk):
            idx = np.flatnonzero(d2[row] <= r2)
            if order == "canonical":
                idx = _order_canonical(points, idx, center)
            elif order != "index":
                raise DataError(f"unknown grouping order {order!r}")
            u = len(idx)
            if u == 0:
                clusters.append(PointCluster(
                    center=center.copy(),
                    points=np.zeros((m, 3)),
                    indices=np.full(m, -1, dtype=np.int64),
                    valid=np.zeros(m, dtype=bool),
                ))
                continue
            take = idx[np.arange(m) % u]
            clusters.append(PointCluster(
                center=center.copy(),
                points=points[take].copy(),
                indices=take,
                valid=np.arange(m) < u,
            ))
    return clusters
