"""Baseline 3D keypoint detectors: ISS, Harris-3D, curvature-SIFT.

Defaults are expressed as multiples of the cloud's mean point spacing
(median nearest-neighbor distance) so behavior transfers across cloud
densities.  Every detector selects existing points, never synthesizes
new ones, and emits results ordered by point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud


@dataclass(frozen=True)
class IssParams:
    salient_radius: float = 0.0   # 0 -> 6 * mean spacing
    nonmax_radius: float = 0.0    # 0 -> 3 * mean spacing
    gamma_21: float = 0.975
    gamma_32: float = 0.975
    min_neighbors: int = 5

    def __post_init__(self):
        if not (0 < self.gamma_21 < 1 and 0 < self.gamma_32 < 1):
            raise ValueError("gamma ratios must be in (0, 1)")
        if self.salient_radius < 0 or self.nonmax_radius < 0:
            raise ValueError("radii must be >= 0")


@dataclass(frozen=True)
class HarrisParams:
    radius: float = 0.0           # 0 -> 6 * mean spacing
    response_threshold: float = 1e-4
    k_constant: float = 0.04

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


@dataclass(frozen=True)
class SiftParams:
    min_scale: float = 0.0        # 0 -> 2 * mean spacing
    octaves: int = 4
    scales_per_octave: int = 4
    contrast_threshold: float = 5e-5

    def __post_init__(self):
        if self.octaves < 1 or self.scales_per_octave < 1:
            raise ValueError("octaves and scales_per_octave must be >= 1")
        if self.min_scale < 0:
            raise ValueError("min_scale must be >= 0")


@dataclass(frozen=True)
class KeypointParams:
    iss: IssParams = field(default_factory=IssParams)
    harris: HarrisParams = field(default_factory=HarrisParams)
    sift: SiftParams = field(default_factory=SiftParams)


def mean_point_spacing(cloud: PointCloud) -> float:
    """Median nearest-neighbor distance; robust to outliers."""
    if len(cloud) < 2:
        raise ValueError("need at least 2 points")
    tree = cKDTree(cloud.points)
    d, _ = tree.query(cloud.points, k=2)
    return float(np.median(d[:, 1]))


def iss_keypoints(cloud: PointCloud, p: KeypointParams = KeypointParams()) -> PointCloud:
    """Intrinsic Shape Signatures detector.

    Per point: density-weighted scatter matrix over the salient radius;
    a point is salient when the eigenvalue ratios l2/l1 and l3/l2 both
    fall below their gammas, then non-maximum suppression on l3.
    """
    ip = p.iss
    if len(cloud) <= ip.min_neighbors:
        raise ValueError("cloud too small for ISS")
    spacing = mean_point_spacing(cloud)
    r_sal = ip.salient_radius if ip.salient_radius > 0 else 6.0 * spacing
    r_nms = ip.nonmax_radius if ip.nonmax_radius > 0 else 3.0 * spacing

    pts = cloud.points
    n = len(pts)
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, r_sal)
    # weight of point j = 1 / (its own neighbor count within r_sal)
    counts = np.array([len(nb) for nb in neighbor_lists], dtype=np.float64)
    weights = 1.0 / np.maximum(counts, 1.0)

    lam3 = np.full(n, -1.0)
    salient = np.zeros(n, dtype=bool)
    for i in range(n):
        nb = [j for j in neighbor_lists[i] if j != i]
        if len(nb) < ip.min_neighbors:
            continue
        diff = pts[nb] - pts[i]
        w = weights[nb]
        cov = (diff * w[:, None]).T @ diff / w.sum()
        ev = np.linalg.eigvalsh(cov)      # ascending
        l1, l2, l3 = ev[2], ev[1], ev[0]
        if l1 <= 0 or l2 <= 0:
            continue
        if l2 / l1 < ip.gamma_21 and l3 / l2 < ip.gamma_32:
            salient[i] = True
            lam3[i] = l3
    idx = _nonmax_suppress(pts, salient, lam3, tree, r_nms)
    return cloud.subset(idx)


def harris3d_keypoints(cloud: PointCloud, p: KeypointParams = KeypointParams()) -> PointCloud:
    """Harris corner response on the scatter of local surface normals.

    The response det(M) - k * trace(M)^2 uses the raw scatter matrix
    M = sum of neighbor normal outer products.  The neighbor-count scaling
    matters: a mean-normalized covariance of unit normals has trace <= 1,
    which bounds det(M) <= (1/3)^3 < k * trace(M)^2 for the classic
    k = 0.04, so the response could never go positive.
    """
    hp = p.harris
    if cloud.normals is None:
        raise ValueError("Harris-3D requires normals")
    if len(cloud) <= 10:
        raise ValueError("cloud too small for Harris-3D")
    spacing = mean_point_spacing(cloud)
    radius = hp.radius if hp.radius > 0 else 6.0 * spacing

    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, radius)
    response = np.full(n, -np.inf)
    for i in range(n):
        nb = neighbor_lists[i]
        if len(nb) < 3:
            continue
        nn = nrm[nb]
        m = nn.T @ nn
        response[i] = np.linalg.det(m) - hp.k_constant * np.trace(m) ** 2
    keep = response > hp.response_threshold
    idx = _nonmax_suppress(pts, keep, response, tree, radius)
    return cloud.subset(idx)


def sift3d_keypoints(cloud: PointCloud, p: KeypointParams = KeypointParams()) -> PointCloud:
    """Difference-of-Gaussians extrema on a curvature proxy field.

    Base field c_i = 1 - |n_i . mean_neighbor_normal|, smoothed at
    geometrically spaced scales; adjacent-scale differences whose extrema
    beat the contrast threshold become keypoints after spatial NMS at the
    extremal scale.
    """
    sp = p.sift
    if cloud.normals is None:
        raise ValueError("SIFT-3D requires normals")
    if len(cloud) <= 50:
        raise ValueError("cloud too small for SIFT-3D")
    spacing = mean_point_spacing(cloud)
    s0 = sp.min_scale if sp.min_scale > 0 else 2.0 * spacing

    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    tree = cKDTree(pts)

    base = _curvature_field(pts, nrm, tree, s0)
    scales = [s0 * 2.0 ** (o + i / sp.scales_per_octave)
              for o in range(sp.octaves) for i in range(sp.scales_per_octave)]
    smoothed = np.stack([_gaussian_smooth(pts, base, tree, s) for s in scales])
    dog = np.diff(smoothed, axis=0)            # (L-1, n)

    candidate = np.zeros(n, dtype=bool)
    strength = np.full(n, -np.inf)
    best_scale = np.zeros(n)
    for lev in range(dog.shape[0]):
        mag = np.abs(dog[lev])
        strong = mag > sp.contrast_threshold
        if not np.any(strong):
            continue
        scale = scales[lev]
        nb_lists = tree.query_ball_point(pts[strong], scale)
        strong_idx = np.nonzero(strong)[0]
        for i, nb in zip(strong_idx, nb_lists):
            val = dog[lev][i]
            others = [j for j in nb if j != i]
            if others and not (np.all(val > dog[lev][others]) or
                               np.all(val < dog[lev][others])):
                continue
            # scale-neighbor extremum
            lo = dog[lev - 1][i] if lev > 0 else None
            hi = dog[lev + 1][i] if lev < dog.shape[0] - 1 else None
            if lo is not None and abs(lo) >= abs(val):
                continue
            if hi is not None and abs(hi) >= abs(val):
                continue
            if mag[i] > strength[i]:
                candidate[i] = True
                strength[i] = mag[i]
                best_scale[i] = scale
    if not np.any(candidate):
        return cloud.subset(np.array([], dtype=np.int64))
    # spatial NMS at each candidate's extremal scale
    keep = []
    cand_idx = np.nonzero(candidate)[0]
    for i in cand_idx:
        nb = tree.query_ball_point(pts[i], best_scale[i])
        rivals = [j for j in nb if j != i and candidate[j]]
        if all(strength[i] > strength[j] or
               (strength[i] == strength[j] and i < j) for j in rivals):
            keep.append(i)
    return cloud.subset(np.asarray(sorted(keep), dtype=np.int64))


def _nonmax_suppress(pts, mask, score, tree, radius):
    """Keep masked points whose score is the strict max in their radius.

    Exact score ties go to the lowest point index.
    """
    idx = np.nonzero(mask)[0]
    keep = []
    for i in idx:
        nb = tree.query_ball_point(pts[i], radius)
        ok = True
        for j in nb:
            if j == i or not mask[j]:
                continue
            if score[j] > score[i] or (score[j] == score[i] and j < i):
                ok = False
                break
        if ok:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def _curvature_field(pts, nrm, tree, radius):
    nb_lists = tree.query_ball_point(pts, radius)
    out = np.zeros(len(pts))
    for i, nb in enumerate(nb_lists):
        mean_n = nrm[nb].mean(axis=0)
        length = np.linalg.norm(mean_n)
        if length > 0:
            out[i] = 1.0 - abs(nrm[i] @ (mean_n / length))
    return out


def _gaussian_smooth(pts, values, tree, sigma):
    nb_lists = tree.query_ball_point(pts, 3.0 * sigma)
    out = np.empty(len(pts))
    inv = -0.5 / (sigma * sigma)
    for i, nb in enumerate(nb_lists):
        d2 = np.sum((pts[nb] - pts[i]) ** 2, axis=1)
        w = np.exp(inv * d2)
        out[i] = (w @ values[nb]) / w.sum()
    return out
