"""Finite point clouds standing in for non-empty compact sets.

Every metric here is computed exactly over the finite clouds: the
Hausdorff-Pompeiu distance h, the sup-distance delta, diameters, and the
greedy epsilon-net used to keep clouds from growing without bound.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

try:
    from scipy.spatial import QhullError
except ImportError:  # scipy < 1.7
    from scipy.spatial.qhull import QhullError

from ifs_errors import DimensionMismatchError

logger = logging.getLogger(__name__)

MAX_DIM = 8
# Largest |A|*|B| evaluated as one dense block of pairwise distances.
BRUTE_PAIR_LIMIT = 1 << 22
# Below this many points the convex hull reduction is not worth it.
HULL_MIN_POINTS = 64

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


def as_point(p: ArrayLike) -> np.ndarray:
    """Return p as a finite 1-D float vector."""
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"A point must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Point has non-finite coordinates: {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """Non-empty finite cloud of points sharing one dimension.

    Stored as a read-only (n, dim) float array. Duplicates are allowed;
    every metric below is invariant under duplication and reordering.
    """
    points: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.points, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"PointSet expects an (n, dim) array, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValueError("PointSet must be non-empty")
        if not 1 <= arr.shape[1] <= MAX_DIM:
            raise ValueError(f"PointSet dimension must be between 1 and {MAX_DIM}, got {arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("PointSet contains non-finite coordinates")
        arr.setflags(write=False)
        object.__setattr__(self, 'points', arr)

    @classmethod
    def from_scalars(cls, values: Iterable[float]) -> 'PointSet':
        """Build a 1-D cloud from plain numbers."""
        return cls(np.asarray(list(values), dtype=float).reshape(-1, 1))

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __repr__(self) -> str:
        return f"PointSet(n={len(self)}, dim={self.dim})"

    def unique(self) -> 'PointSet':
        """Drop exact duplicates, keeping first occurrences in input order."""
        _, idx = np.unique(self.points, axis=0, return_index=True)
        return PointSet(self.points[np.sort(idx)])


def _check_dims(A: PointSet, B: PointSet) -> None:
    if A.dim != B.dim:
        raise DimensionMismatchError(f"Dimension mismatch: {A.dim} vs {B.dim}")


def dist(p: ArrayLike, q: ArrayLike) -> float:
    """Euclidean distance between two points."""
    a = as_point(p)
    b = as_point(q)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.sqrt(np.sum(np.square(a - b))))


def _chunk_rows(n_rows: int, n_cols: int) -> int:
    return max(1, BRUTE_PAIR_LIMIT // max(1, n_cols))


def _nearest_brute(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[0])
    step = _chunk_rows(a.shape[0], b.shape[0])
    for start in range(0, a.shape[0], step):
        diff = a[start:start + step, None, :] - b[None, :, :]
        out[start:start + step] = np.sqrt(np.sum(np.square(diff), axis=-1)).min(axis=1)
    return out


def _nearest_kdtree(a: np.ndarray, b: np.ndarray, workers: int) -> np.ndarray:
    # The tree only picks the neighbour; the distance is recomputed with the
    # same expression as the brute force path so both agree bit for bit.
    _, idx = cKDTree(b).query(a, k=1, workers=workers)
    return np.sqrt(np.sum(np.square(a - b[idx]), axis=1))


def _nearest_distances(a: np.ndarray, b: np.ndarray, method: str, workers: int) -> np.ndarray:
    if method == 'auto':
        method = 'brute' if a.shape[0] * b.shape[0] <= BRUTE_PAIR_LIMIT else 'kdtree'
    if method == 'brute':
        return _nearest_brute(a, b)
    if method == 'kdtree':
        return _nearest_kdtree(a, b, workers)
    raise ValueError(f"Unknown nearest neighbour method '{method}'")


def directed_distance(A: PointSet, B: PointSet, method: str = 'auto', workers: int = 1) -> float:
    """d(A, B) = sup over x in A of the distance from x to B."""
    _check_dims(A, B)
    return float(_nearest_distances(A.points, B.points, method, workers).max())


def hausdorff(A: PointSet, B: PointSet, method: str = 'auto', workers: int = 1) -> float:
    """Hausdorff-Pompeiu distance max(d(A, B), d(B, A))."""
    _check_dims(A, B)
    return max(directed_distance(A, B, method, workers), directed_distance(B, A, method, workers))


def _extreme_points(pts: np.ndarray) -> np.ndarray:
    """Subset of pts on which every sup of distances is attained."""
    if pts.shape[1] == 1:
        return np.array([[pts[:, 0].min()], [pts[:, 0].max()]])
    if pts.shape[0] < HULL_MIN_POINTS:
        return pts
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] <= uniq.shape[1] + 1:
        return uniq
    try:
        return uniq[ConvexHull(uniq).vertices]
    except (QhullError, ValueError) as e:
        logger.debug(f"Convex hull unavailable ({e.__class__.__name__}); using all {uniq.shape[0]} points")
        return uniq


def _max_pairwise(a: np.ndarray, b: np.ndarray) -> float:
    best = 0.0
    step = _chunk_rows(a.shape[0], b.shape[0])
    for start in range(0, a.shape[0], step):
        diff = a[start:start + step, None, :] - b[None, :, :]
        best = max(best, float(np.sqrt(np.sum(np.square(diff), axis=-1)).max()))
    return best


def delta_sup(A: PointSet, B: PointSet) -> float:
    """delta(A, B): sup of dist(x, y) over x in A, y in B. Always >= hausdorff(A, B)."""
    _check_dims(A, B)
    return _max_pairwise(_extreme_points(A.points), _extreme_points(B.points))


def diameter(A: PointSet) -> float:
    return delta_sup(A, A)


def decimate(A: PointSet, eps: float, workers: int = 1) -> PointSet:
    """Greedy first-fit epsilon-net of A in input order.

    Every dropped point lies within eps of a kept point, so
    hausdorff(A, decimate(A, eps)) <= eps. eps == 0 only drops exact duplicates.
    """
    if eps < 0:
        raise ValueError(f"Decimation radius must be non-negative, got {eps}")
    if eps == 0:
        return A.unique()
    pts = A.points
    # A few ulps of slack keeps the kd-tree ball test on the safe side of eps.
    radius = eps * (1.0 - 4.0 * np.finfo(float).eps)
    tree = cKDTree(pts)
    consumed = np.zeros(pts.shape[0], dtype=bool)
    keep = np.zeros(pts.shape[0], dtype=bool)
    for i in range(pts.shape[0]):
        if consumed[i]:
            continue
        keep[i] = True
        consumed[tree.query_ball_point(pts[i], r=radius, workers=workers)] = True
    logger.debug(f"Decimated {pts.shape[0]} points to {int(keep.sum())} (eps={eps})")
    return PointSet(pts[keep])


def union(sets: Sequence[PointSet]) -> PointSet:
    """Union of clouds, concatenated in the given order."""
    if not sets:
        raise ValueError("Union of an empty family")
    for other in sets[1:]:
        _check_dims(sets[0], other)
    return PointSet(np.concatenate([s.points for s in sets], axis=0))


def write_csv(path: str, A: PointSet) -> None:
    """One row per point, no header, 17 significant digits."""
    np.savetxt(path, A.points, delimiter=',', fmt='%.17g')
    logger.info(f"Wrote {len(A)} points to {path}")


def read_csv(path: str) -> PointSet:
    try:
        data = np.loadtxt(path, delimiter=',', ndmin=2)
    except FileNotFoundError:
        logger.error(f"Point cloud file not found: {path}")
        raise
    if data.size == 0:
        raise ValueError(f"Point cloud file is empty: {path}")
    return PointSet(data)
