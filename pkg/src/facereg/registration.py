"""Two-stage ICP: coarse alignment on keypoints, fine alignment on clouds.

Coarse runs on the sparse facial-keypoint clouds (at most a few dozen
points) with centroid pre-alignment; fine refines on the full segmented
clouds starting from the coarse result.  RMSE is the source-to-target
nearest-neighbor root-mean-square after applying a transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PipelineError
from .geometry import (PointCloud, RigidTransform, build_index, compose,
                       estimate_rigid)

COARSE_MAX_ITERATIONS = 200
FINE_MAX_ITERATIONS = 150


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    max_correspondence_distance: float = 0.0  # 0 = unlimited
    translation_epsilon: float = 1e-8
    rmse_epsilon: float = 1e-8
    overlap_fraction: float = 1.0             # best-distance trimming

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 < self.overlap_fraction <= 1):
            raise ValueError("overlap_fraction must be in (0, 1]")
        if self.translation_epsilon < 0 or self.rmse_epsilon < 0:
            raise ValueError("epsilons must be >= 0")
        if self.max_correspondence_distance < 0:
            raise ValueError("max_correspondence_distance must be >= 0")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    rmse: float
    iterations_run: int
    converged: bool
    per_iteration_rmse: tuple

    def to_dict(self) -> dict:
        d = self.transform.to_dict()
        d.update(rmse=self.rmse, iterations_run=self.iterations_run,
                 converged=self.converged,
                 per_iteration_rmse=list(self.per_iteration_rmse))
        return d

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def from_dict(d: dict) -> "RegistrationResult":
        return RegistrationResult(transform=RigidTransform.from_dict(d),
                                  rmse=float(d["rmse"]),
                                  iterations_run=int(d["iterations_run"]),
                                  converged=bool(d["converged"]),
                                  per_iteration_rmse=tuple(d["per_iteration_rmse"]))


def icp(source: PointCloud, target: PointCloud,
        init: RigidTransform = None, p: IcpParams = IcpParams()) -> RegistrationResult:
    """Point-to-point ICP mapping source into the target frame.

    Each iteration: transform source, match every point to its nearest
    target point, gate by max_correspondence_distance, trim to the best
    overlap_fraction by distance, solve the rigid least-squares step, and
    record the residual RMSE of the updated transform on the surviving
    pairs.  Stops on the iteration budget or either epsilon.
    """
    if len(source) < 3 or len(target) < 3:
        raise PipelineError("need at least 3 points in source and target")
    if init is None:
        init = RigidTransform.identity()
    index = build_index(target)
    current = init
    history = []
    converged = False
    iterations = 0
    for _ in range(p.max_iterations):
        iterations += 1
        moved = source.points @ current.rotation.T + current.translation
        nn_idx, nn_dist = index.nearest_many(moved)
        keep = np.ones(len(moved), dtype=bool)
        if p.max_correspondence_distance > 0:
            keep &= nn_dist <= p.max_correspondence_distance
        if p.overlap_fraction < 1.0:
            n_keep = max(3, int(np.ceil(p.overlap_fraction * keep.sum())))
            kept_idx = np.nonzero(keep)[0]
            order = np.argsort(nn_dist[kept_idx], kind="stable")[:n_keep]
            mask = np.zeros(len(moved), dtype=bool)
            mask[kept_idx[order]] = True
            keep = mask
        if keep.sum() < 3:
            raise PipelineError("correspondence starvation")
        src = moved[keep]
        dst = target.points[nn_idx[keep]]
        delta = estimate_rigid(src, dst)
        current = compose(delta, current)
        residual = src @ delta.rotation.T + delta.translation - dst
        rmse = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
        history.append(rmse)
        step = float(np.linalg.norm(delta.translation))
        if len(history) >= 2 and abs(history[-2] - history[-1]) < p.rmse_epsilon:
            converged = True
            break
        if step < p.translation_epsilon:
            converged = True
            break
    return RegistrationResult(transform=current, rmse=history[-1],
                              iterations_run=iterations, converged=converged,
                              per_iteration_rmse=tuple(history))


def coarse_register(source_kp: PointCloud, target_kp: PointCloud) -> RegistrationResult:
    """Keypoint-cloud ICP with centroid pre-alignment (200 iterations max)."""
    if len(source_kp) < 3 or len(target_kp) < 3:
        raise PipelineError("keypoint clouds need at least 3 points")
    shift = target_kp.points.mean(axis=0) - source_kp.points.mean(axis=0)
    init = RigidTransform(np.eye(3), shift)
    params = IcpParams(max_iterations=COARSE_MAX_ITERATIONS,
                       max_correspondence_distance=0.0,
                       overlap_fraction=1.0,
                       translation_epsilon=1e-8, rmse_epsilon=1e-8)
    return icp(source_kp, target_kp, init, params)


def fine_register(source: PointCloud, target: PointCloud,
                  init: RigidTransform) -> RegistrationResult:
    """Full-cloud ICP refinement from the coarse transform (150 iterations,
    100% overlap)."""
    params = IcpParams(max_iterations=FINE_MAX_ITERATIONS,
                       max_correspondence_distance=0.0,
                       overlap_fraction=1.0,
                       translation_epsilon=1e-8, rmse_epsilon=1e-8)
    return icp(source, target, init, params)


def evaluate_rmse(source: PointCloud, target: PointCloud, t: RigidTransform) -> float:
    """Source-to-target nearest-neighbor RMS distance after transform, mm."""
    if len(source) == 0 or len(target) == 0:
        raise PipelineError("empty cloud")
    moved = source.points @ t.rotation.T + t.translation
    _, d = build_index(target).nearest_many(moved)
    return float(np.sqrt(np.mean(d ** 2)))
