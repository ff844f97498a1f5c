"""Core 3D types: point clouds, rigid transforms, nearest-neighbor index.

All coordinates are in millimeters.  Everything here is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import PipelineError

_NORMAL_TOL = 1e-6
_ORTHO_TOL = 1e-9


class PointCloud:
    """An ordered set of 3D points with optional unit normals.

    points: (N, 3) float64, finite.  normals: (N, 3) unit vectors or None.
    """

    __slots__ = ("points", "normals")

    def __init__(self, points, normals=None):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be an (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN or Inf")
        nrm = None
        if normals is not None:
            nrm = np.ascontiguousarray(normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if not np.all(np.abs(lengths - 1.0) < _NORMAL_TOL):
                raise ValueError("normals must be unit length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        pts.setflags(write=False)
        if nrm is not None:
            nrm.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("PointCloud is immutable")

    def __len__(self):
        return self.points.shape[0]

    def subset(self, indices) -> "PointCloud":
        """New cloud keeping only the given point indices (order preserved)."""
        idx = np.asarray(indices)
        nrm = self.normals[idx] if self.normals is not None else None
        return PointCloud(self.points[idx], nrm)


class RigidTransform:
    """A proper rotation plus translation, applied as p -> R @ p + t."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        R = np.ascontiguousarray(rotation, dtype=np.float64)
        t = np.ascontiguousarray(translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        R.setflags(write=False)
        t.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["rotation"]), np.asarray(d["translation"]))


class NeighborIndex:
    """Read-only KD-tree over a cloud.

    Query results match a brute-force linear scan; exact distance ties are
    broken by the lowest point index.
    """

    __slots__ = ("_tree", "_points")

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise PipelineError("empty cloud")
        object.__setattr__(self, "_points", cloud.points)
        object.__setattr__(self, "_tree", cKDTree(cloud.points))

    def __setattr__(self, name, value):
        raise AttributeError("NeighborIndex is immutable")

    def nearest(self, p):
        """Index and distance of the nearest point to p."""
        q = np.asarray(p, dtype=np.float64)
        d, i = self._tree.query(q, k=1)
        i, d = self._break_tie(q, int(i), float(d))
        return i, d

    def nearest_many(self, pts):
        """Vectorized nearest query: (indices, distances) arrays."""
        d, i = self._tree.query(np.asarray(pts, dtype=np.float64), k=1)
        return np.asarray(i, dtype=np.int64), np.asarray(d, dtype=np.float64)

    def k_nearest(self, p, k: int):
        """Indices and distances of the k nearest points, nearest first."""
        q = np.asarray(p, dtype=np.float64)
        k = min(k, len(self._points))
        d, i = self._tree.query(q, k=k)
        d = np.atleast_1d(d)
        i = np.atleast_1d(i).astype(np.int64)
        # stable order: by distance, then index
        order = np.lexsort((i, d))
        return i[order], d[order]

    def radius(self, p, r: float):
        """Sorted indices of all points within distance r of p."""
        idx = self._tree.query_ball_point(np.asarray(p, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def _break_tie(self, q, i, d):
        # cKDTree tie order is unspecified; re-check among equal distances
        ties = self._tree.query_ball_point(q, d) if d > 0 else [i]
        if len(ties) > 1:
            dists = np.linalg.norm(self._points[ties] - q, axis=1)
            exact = [j for j, dj in zip(ties, dists) if dj == dists.min()]
            if len(exact) > 1:
                i = min(exact)
        return i, d


def build_index(cloud: PointCloud) -> NeighborIndex:
    """Build the spatial index used by ICP correspondence search."""
    return NeighborIndex(cloud)


def estimate_rigid(source_pts, target_pts) -> RigidTransform:
    """Least-squares rigid transform mapping source points onto target points.

    Cross-covariance SVD (Arun/Kabsch) with reflection correction: if
    det(V @ U.T) < 0 the last singular direction is negated so the result
    is always a proper rotation.
    """
    src = np.asarray(source_pts, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target_pts, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise PipelineError("source/target length mismatch")
    if src.shape[0] < 3:
        raise PipelineError("need at least 3 point pairs")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    src_c = src - c_src
    dst_c = dst - c_dst
    # collinear source spans < 2 directions and leaves rotation unconstrained
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise PipelineError("degenerate configuration")
    H = src_c.T @ dst_c
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    t = c_dst - R @ c_src
    return RigidTransform(R, t)


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point p -> R p + t; normals rotate without translation."""
    pts = cloud.points @ t.rotation.T + t.translation
    nrm = cloud.normals @ t.rotation.T if cloud.normals is not None else None
    return PointCloud(pts, nrm)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)
