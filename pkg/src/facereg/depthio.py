"""Depth-frame ingestion: back-projection, landmark lifting, segmentation.

Depth frames arrive as 16-bit binary PGM plus an intrinsics JSON sidecar;
2D facial landmarks arrive as JSON in the 68-point convention.  Landmarks
are expected in depth-frame pixel coordinates (streams pre-aligned
upstream).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, PipelineError
from .geometry import PointCloud

# 68-point facial convention: nose = 27..35, eyes = 36..47
EYES_NOSE_INDICES = frozenset(range(27, 48))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float  # meters per raw depth unit

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


@dataclass(frozen=True)
class DepthFrame:
    """Row-major raw depth grid; 0 marks an invalid pixel."""
    width: int
    height: int
    depth: np.ndarray  # (height, width) raw units
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.asarray(self.depth)
        if d.shape != (self.height, self.width):
            raise ValueError("depth array shape must be (height, width)")
        if np.any(d < 0):
            raise ValueError("depth values must be >= 0")
        object.__setattr__(self, "depth", np.ascontiguousarray(d, dtype=np.float64))


@dataclass(frozen=True)
class LandmarkSet:
    """Sub-pixel 2D landmarks indexed per the 68-point facial convention."""
    image_width: int
    image_height: int
    landmarks: tuple  # of (index, u, v)

    def __post_init__(self):
        seen = set()
        for idx, u, v in self.landmarks:
            if not (0 <= idx <= 67):
                raise ValueError(f"landmark index {idx} outside [0, 67]")
            if idx in seen:
                raise ValueError(f"duplicate landmark index {idx}")
            seen.add(idx)
            if not (0 <= u < self.image_width and 0 <= v < self.image_height):
                raise ValueError(f"landmark {idx} at ({u}, {v}) outside image")
        object.__setattr__(self, "landmarks",
                           tuple((int(i), float(u), float(v)) for i, u, v in self.landmarks))


def depth_to_cloud(frame: DepthFrame) -> PointCloud:
    """Back-project every valid pixel through the pinhole model, in mm.

    Output order is row-major over valid pixels.
    """
    K = frame.intrinsics
    valid = frame.depth > 0
    if not np.any(valid):
        raise PipelineError("empty depth frame")
    vs, us = np.nonzero(valid)
    z = frame.depth[vs, us] * K.depth_scale * 1000.0
    x = (us - K.cx) * z / K.fx
    y = (vs - K.cy) * z / K.fy
    return PointCloud(np.stack([x, y, z], axis=1))


def lift_landmarks(frame: DepthFrame, lm: LandmarkSet, window: int = 5):
    """Back-project 2D landmarks into 3D using the frame's depth.

    A landmark on an invalid pixel takes the median of valid depths in a
    window x window neighborhood; if the whole window is invalid the
    landmark is dropped.  Returns (cloud, surviving_indices), both ordered
    by landmark index.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    if (lm.image_width, lm.image_height) != (frame.width, frame.height):
        raise ValueError("landmark image dimensions do not match frame")
    K = frame.intrinsics
    half = window // 2
    pts, survivors = [], []
    for idx, u, v in sorted(lm.landmarks):
        ui, vi = int(round(u)), int(round(v))
        ui = min(max(ui, 0), frame.width - 1)
        vi = min(max(vi, 0), frame.height - 1)
        d = frame.depth[vi, ui]
        if d <= 0:
            patch = frame.depth[max(0, vi - half):vi + half + 1,
                                max(0, ui - half):ui + half + 1]
            good = patch[patch > 0]
            if good.size == 0:
                continue
            d = float(np.median(good))
        z = d * K.depth_scale * 1000.0
        pts.append(((u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z))
        survivors.append(idx)
    if not pts:
        raise PipelineError("no landmark could be lifted")
    return PointCloud(np.asarray(pts)), survivors


def select_eyes_nose(lm: LandmarkSet) -> LandmarkSet:
    """Keep only the eyes+nose landmarks (indices 27-47)."""
    kept = tuple(e for e in lm.landmarks if e[0] in EYES_NOSE_INDICES)
    return LandmarkSet(lm.image_width, lm.image_height, kept)


def segment_region(cloud: PointCloud, keypoints: PointCloud,
                   margin_mm: float = 10.0) -> PointCloud:
    """Crop a cloud to the keypoint bounding box expanded by a margin.

    Boundary points are retained.
    """
    if len(keypoints) == 0:
        raise ValueError("keypoints must be non-empty")
    lo = keypoints.points.min(axis=0) - margin_mm
    hi = keypoints.points.max(axis=0) + margin_mm
    inside = np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
    if not np.any(inside):
        raise PipelineError("segmentation produced empty cloud")
    return cloud.subset(np.nonzero(inside)[0])


# ---------------------------------------------------------------------------
# file I/O

def write_pgm16(path, data: np.ndarray) -> None:
    """Write a 16-bit binary PGM (P5, maxval 65535, big-endian samples)."""
    arr = np.asarray(data)
    if np.any(arr < 0) or np.any(arr > 65535):
        raise ValueError("values out of u16 range")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(arr.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a binary PGM; returns (height, width) uint16."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise InputError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    dt = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dt, w * h, pos).reshape(h, w)
    return data.astype(np.uint16)


def write_pgm8(path, data: np.ndarray) -> None:
    arr = np.asarray(data).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def write_depth_frame(path_prefix, frame: DepthFrame) -> None:
    """Write <prefix>.pgm and <prefix>.intrinsics.json."""
    p = Path(path_prefix)
    write_pgm16(p.with_suffix(".pgm"), np.rint(frame.depth).astype(np.uint16))
    K = frame.intrinsics
    sidecar = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
               "depth_scale": K.depth_scale}
    p.with_suffix(".intrinsics.json").write_text(json.dumps(sidecar, indent=2))


def read_depth_frame(pgm_path, intrinsics_path=None) -> DepthFrame:
    p = Path(pgm_path)
    if intrinsics_path is None:
        intrinsics_path = p.with_suffix(".intrinsics.json")
    data = read_pgm16(p)
    try:
        meta = json.loads(Path(intrinsics_path).read_text())
        K = CameraIntrinsics(fx=float(meta["fx"]), fy=float(meta["fy"]),
                             cx=float(meta["cx"]), cy=float(meta["cy"]),
                             depth_scale=float(meta["depth_scale"]))
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise InputError(f"{intrinsics_path}: bad intrinsics sidecar: {e}") from e
    h, w = data.shape
    return DepthFrame(width=w, height=h, depth=data.astype(np.float64), intrinsics=K)


def write_landmarks(path, lm: LandmarkSet) -> None:
    doc = {"image_width": lm.image_width, "image_height": lm.image_height,
           "landmarks": [{"index": i, "u": u, "v": v} for i, u, v in lm.landmarks]}
    Path(path).write_text(json.dumps(doc, indent=2))


def read_landmarks(path) -> LandmarkSet:
    try:
        doc = json.loads(Path(path).read_text())
        entries = tuple((e["index"], e["u"], e["v"]) for e in doc["landmarks"])
        return LandmarkSet(int(doc["image_width"]), int(doc["image_height"]), entries)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise InputError(f"{path}: bad landmark file: {e}") from e
