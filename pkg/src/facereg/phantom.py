"""Synthetic face phantom with known ground truth.

The face is an analytic height field over the xy plane: the front of a
head ellipsoid plus a Gaussian nose ridge minus two Gaussian eye sockets,
nose pointing along +z.  The same surface is voxelized into a CT-like
scalar volume and ray-cast into a depth frame from a pinhole camera under
a known rigid offset, so every derived quantity (clouds, landmarks,
transforms) has an exact reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .depthio import CameraIntrinsics, DepthFrame, LandmarkSet
from .errors import PipelineError
from .geometry import PointCloud, RigidTransform, compose, invert as _invert

VOLUME_INSIDE = 1000.0
VOLUME_ISO = 500.0
VOLUME_RAMP = 50.0  # value units per mm of signed height


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 42
    # volume grid
    grid_spacing: tuple = (1.5, 1.5, 1.5)
    grid_extent: tuple = ((-75.0, 75.0), (-90.0, 90.0), (28.0, 98.0))
    # face geometry, mm
    head_radii: tuple = (75.0, 95.0, 80.0)
    nose_amplitude: float = 15.0
    nose_width: tuple = (10.0, 22.0)
    nose_center_y: float = -5.0
    eye_depth: float = 6.0
    eye_radius: float = 10.0
    eye_separation: float = 56.0
    eye_center_y: float = 25.0
    # camera
    viewpoint: tuple = (0.0, 0.0, 450.0)
    view_axis: tuple = (0.0, 0.0, -1.0)
    frame_size: tuple = (200, 180)
    focal_px: float = 330.0
    depth_scale: float = 0.001  # raw unit = 1 mm
    noise_sigma: float = 0.0

    def __post_init__(self):
        for v in (self.nose_amplitude, self.eye_depth, self.eye_radius,
                  self.eye_separation, self.focal_px, *self.head_radii,
                  *self.nose_width, *self.grid_spacing):
            if v <= 0:
                raise ValueError("geometric parameters must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "grid_spacing": list(self.grid_spacing),
            "grid_extent": [list(e) for e in self.grid_extent],
            "head_radii": list(self.head_radii),
            "nose_amplitude": self.nose_amplitude,
            "nose_width": list(self.nose_width),
            "nose_center_y": self.nose_center_y,
            "eye_depth": self.eye_depth, "eye_radius": self.eye_radius,
            "eye_separation": self.eye_separation,
            "eye_center_y": self.eye_center_y,
            "viewpoint": list(self.viewpoint), "view_axis": list(self.view_axis),
            "frame_size": list(self.frame_size), "focal_px": self.focal_px,
            "depth_scale": self.depth_scale, "noise_sigma": self.noise_sigma,
        }

    @staticmethod
    def from_dict(d: dict) -> "PhantomSpec":
        kwargs = dict(d)
        for key in ("grid_spacing", "head_radii", "nose_width", "viewpoint",
                    "view_axis", "frame_size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "grid_extent" in kwargs:
            kwargs["grid_extent"] = tuple(tuple(e) for e in kwargs["grid_extent"])
        return PhantomSpec(**kwargs)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load_json(path) -> "PhantomSpec":
        return PhantomSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PhantomData:
    volume: "ScalarVolume"
    depth_frame: DepthFrame
    camera_landmarks: LandmarkSet
    surface_landmarks_3d: PointCloud
    ground_truth: RigidTransform  # maps CT/world frame into camera frame


def face_height(spec: PhantomSpec, x, y):
    """Surface height z = h(x, y) of the phantom face, vectorized."""
    rx, ry, rz = spec.head_radii
    q = (np.asarray(x) / rx) ** 2 + (np.asarray(y) / ry) ** 2
    base = rz * np.sqrt(np.clip(1.0 - q, 0.0, None))
    wx, wy = spec.nose_width
    nose = spec.nose_amplitude * np.exp(
        -0.5 * ((np.asarray(x) / wx) ** 2
                + ((np.asarray(y) - spec.nose_center_y) / wy) ** 2))
    half = spec.eye_separation / 2.0
    s2 = 2.0 * spec.eye_radius ** 2
    eyes = spec.eye_depth * (
        np.exp(-(((np.asarray(x) - half) ** 2
                  + (np.asarray(y) - spec.eye_center_y) ** 2) / s2))
        + np.exp(-(((np.asarray(x) + half) ** 2
                    + (np.asarray(y) - spec.eye_center_y) ** 2) / s2)))
    return base + nose - eyes


def implicit(spec: PhantomSpec, pts):
    """Signed height h(x, y) - z: positive inside the solid head."""
    p = np.asarray(pts, dtype=np.float64)
    return face_height(spec, p[..., 0], p[..., 1]) - p[..., 2]


def base_camera_pose(spec: PhantomSpec) -> RigidTransform:
    """World-to-camera transform for the spec's viewpoint and view axis."""
    w = np.asarray(spec.view_axis, dtype=np.float64)
    w = w / np.linalg.norm(w)
    helper = np.array([0.0, 1.0, 0.0])
    if abs(w @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    x_cam = np.cross(helper, w)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(w, x_cam)
    R = np.stack([x_cam, y_cam, w])   # rows = camera axes in world coords
    t = -R @ np.asarray(spec.viewpoint, dtype=np.float64)
    return RigidTransform(R, t)


def analytic_landmarks_face_frame(spec: PhantomSpec) -> tuple:
    """21 eyes+nose landmarks (indices 27-47) in the face frame.

    Returns (indices, (21, 3) points with z = h(x, y)).
    """
    xs, ys = [], []
    # 27-30: nose bridge down the midline
    for k in range(4):
        xs.append(0.0)
        ys.append(spec.eye_center_y - k * (spec.eye_center_y - spec.nose_center_y) / 3.0)
    # 31-35: nostril line below the tip
    base_y = spec.nose_center_y - 1.2 * spec.nose_width[1]
    for k in range(5):
        xs.append(-spec.nose_width[0] * (1.0 - 0.5 * k))
        ys.append(base_y)
    # 36-41 / 42-47: hexagonal rims of the right/left eye sockets
    for sign in (+1.0, -1.0):
        cx0 = sign * spec.eye_separation / 2.0
        for k in range(6):
            ang = np.pi / 6.0 + k * np.pi / 3.0
            xs.append(cx0 + 1.3 * spec.eye_radius * np.cos(ang))
            ys.append(spec.eye_center_y + 1.3 * spec.eye_radius * np.sin(ang))
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    zs = face_height(spec, xs, ys)
    indices = list(range(27, 48))
    return indices, np.stack([xs, ys, zs], axis=1)


def face_to_world(spec: PhantomSpec) -> RigidTransform:
    """Face frame into the CT/world frame.

    The CT/world frame is chosen to coincide with the camera frame at zero
    offset, so the relative misalignment between the camera and CT clouds
    is exactly the requested perturbation.
    """
    return base_camera_pose(spec)


def analytic_landmarks(spec: PhantomSpec) -> tuple:
    """21 eyes+nose landmarks (indices 27-47) in CT/world coordinates."""
    indices, pts = analytic_landmarks_face_frame(spec)
    fw = face_to_world(spec)
    return indices, pts @ fw.rotation.T + fw.translation


def face_center_world(spec: PhantomSpec) -> np.ndarray:
    fw = face_to_world(spec)
    c = np.array([0.0, 0.0, 0.75 * spec.head_radii[2]])
    return fw.rotation @ c + fw.translation


def generate_phantom(spec: PhantomSpec,
                     ground_truth: RigidTransform = None) -> PhantomData:
    """Build the CT-like volume, the camera depth frame, and all references.

    ground_truth is a rigid offset applied about the face center (identity
    by default); it maps CT/world points into the camera frame and is
    exactly what registration must invert.  Depth noise and all randomness
    derive from the spec seed.
    """
    from .surface import ScalarVolume

    rng = np.random.default_rng(spec.seed)
    offset = ground_truth if ground_truth is not None else RigidTransform.identity()
    center = face_center_world(spec)
    world_to_cam = RigidTransform(
        offset.rotation,
        center - offset.rotation @ center + offset.translation)
    fw = face_to_world(spec)
    wf = RigidTransform(fw.rotation.T, -fw.rotation.T @ fw.translation)

    # --- volume: gridded in world coordinates with a linear ramp around the
    # surface so interpolation is sub-voxel.  The world grid maps to an
    # axis-aligned grid in the face frame (axes flipped), so values stay exact.
    (fx0, fx1), (fy0, fy1), (fz0, fz1) = spec.grid_extent
    corners_f = np.array([[x, y, z] for x in (fx0, fx1)
                          for y in (fy0, fy1) for z in (fz0, fz1)])
    corners_w = corners_f @ fw.rotation.T + fw.translation
    lo = corners_w.min(axis=0)
    hi = corners_w.max(axis=0)
    sx, sy, sz = spec.grid_spacing
    nx = int(np.floor((hi[0] - lo[0]) / sx)) + 1
    ny = int(np.floor((hi[1] - lo[1]) / sy)) + 1
    nz = int(np.floor((hi[2] - lo[2]) / sz)) + 1
    gx = lo[0] + sx * np.arange(nx)
    gy = lo[1] + sy * np.arange(ny)
    gz = lo[2] + sz * np.arange(nz)
    X, Y, Z = np.meshgrid(gx, gy, gz, indexing="ij")
    pts_w = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    pts_f = pts_w @ wf.rotation.T + wf.translation
    signed = (face_height(spec, pts_f[:, 0], pts_f[:, 1])
              - pts_f[:, 2]).reshape(nx, ny, nz)
    vals = np.clip(VOLUME_ISO + VOLUME_RAMP * signed, 0.0, VOLUME_INSIDE)
    volume = ScalarVolume(dims=(nx, ny, nz), spacing=(sx, sy, sz),
                          origin=(lo[0], lo[1], lo[2]),
                          values=vals.transpose(2, 1, 0).reshape(-1))

    # --- depth frame by ray marching in the world frame
    W, Hpx = spec.frame_size
    K = CameraIntrinsics(fx=spec.focal_px, fy=spec.focal_px,
                         cx=W / 2.0, cy=Hpx / 2.0, depth_scale=spec.depth_scale)
    cam_to_face = compose(wf, _invert(world_to_cam))
    depth = _raycast_depth(spec, cam_to_face, K, W, Hpx)
    if not np.any(depth > 0):
        raise PipelineError("camera pose misses the surface")
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=depth.shape)
        depth = np.where(depth > 0, np.maximum(depth + noise / (K.depth_scale * 1000.0), 1.0), 0.0)
    frame = DepthFrame(width=W, height=Hpx, depth=depth, intrinsics=K)

    # --- landmarks: analytic world points + their camera pixels
    indices, lm_world = analytic_landmarks(spec)
    lm_cam = lm_world @ world_to_cam.rotation.T + world_to_cam.translation
    u = K.fx * lm_cam[:, 0] / lm_cam[:, 2] + K.cx
    v = K.fy * lm_cam[:, 1] / lm_cam[:, 2] + K.cy
    inside = (u >= 0) & (u < W) & (v >= 0) & (v < Hpx) & (lm_cam[:, 2] > 0)
    if not np.all(inside):
        raise PipelineError("camera pose misses the surface landmarks")
    cam_lm = LandmarkSet(image_width=W, image_height=Hpx,
                         landmarks=tuple((i, float(ui), float(vi))
                                         for i, ui, vi in zip(indices, u, v)))
    return PhantomData(volume=volume, depth_frame=frame,
                       camera_landmarks=cam_lm,
                       surface_landmarks_3d=PointCloud(lm_world),
                       ground_truth=world_to_cam)


def _raycast_depth(spec, cam_to_face, K, W, Hpx):
    """First surface hit per pixel along camera rays; 0 where no hit.

    cam_to_face maps camera-frame points into the face frame where the
    implicit surface lives; the returned raw depth is the camera-frame z.
    """
    us, vs = np.meshgrid(np.arange(W), np.arange(Hpx), indexing="xy")
    dirs_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy,
                         np.ones_like(us, dtype=np.float64)], axis=-1)
    cam_origin_w = cam_to_face.translation
    dirs_w = dirs_cam @ cam_to_face.rotation.T

    # march along t (= camera-frame depth since dir z-component is 1)
    t_lo, t_hi, dt = 250.0, 650.0, 2.0
    ts = np.arange(t_lo, t_hi + dt, dt)
    hit_t = np.zeros((Hpx, W))
    prev_g = None
    prev_t = t_lo
    found = np.zeros((Hpx, W), dtype=bool)
    lo_t = np.zeros((Hpx, W))
    hi_t = np.zeros((Hpx, W))
    for t in ts:
        pts = cam_origin_w + t * dirs_w
        g = implicit(spec, pts)
        if prev_g is not None:
            crossing = (~found) & (prev_g < 0) & (g >= 0)
            lo_t[crossing] = prev_t
            hi_t[crossing] = t
            found |= crossing
        prev_g, prev_t = g, t
    if not np.any(found):
        return hit_t
    # vectorized bisection on the bracketed rays
    rows, cols = np.nonzero(found)
    a = lo_t[rows, cols]
    b = hi_t[rows, cols]
    d = dirs_w[rows, cols]
    for _ in range(40):
        m = 0.5 * (a + b)
        gm = implicit(spec, cam_origin_w + m[:, None] * d)
        neg = gm < 0
        a = np.where(neg, m, a)
        b = np.where(neg, b, m)
    t_hit = 0.5 * (a + b)
    # reject hits outside the facial oval (background plane of the height field)
    p_hit = cam_origin_w + t_hit[:, None] * d
    rx, ry, _ = spec.head_radii
    oval = (p_hit[:, 0] / rx) ** 2 + (p_hit[:, 1] / ry) ** 2 < 0.92
    raw = t_hit / (K.depth_scale * 1000.0)   # world mm -> raw depth units
    hit_t[rows[oval], cols[oval]] = raw[oval]
    return hit_t
