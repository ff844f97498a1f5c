"""Skin-surface extraction from a scalar volume and normal-angle rendering.

The isosurface comes from classic table-driven marching cubes (256-case
edge/triangle tables, linear interpolation).  The normal-angle image is an
orthographic rendering whose pixel intensity encodes the angle between the
surface normal and the view axis; each populated pixel remembers the 3D
surface point that produced it, so 2D landmarks detected on the image can
be mapped straight back to the surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .errors import InputError, PipelineError
from .geometry import PointCloud


@dataclass(frozen=True)
class ScalarVolume:
    """A 3D scalar grid; values row-major with x fastest, world units mm."""
    dims: tuple          # (nx, ny, nz)
    spacing: tuple       # (sx, sy, sz) mm/voxel
    origin: tuple        # (ox, oy, oz) mm
    values: np.ndarray   # flat, length nx*ny*nz

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 2:
            raise ValueError("volume needs >= 2 voxels per axis")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != nx * ny * nz:
            raise ValueError("values length must equal nx*ny*nz")
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> np.ndarray:
        """Values as a (nx, ny, nz) array indexed [ix, iy, iz]."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray   # (N, 3) mm
    triangles: np.ndarray  # (M, 3) vertex indices
    normals: np.ndarray    # (N, 3) unit

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=np.float64)
        F = np.ascontiguousarray(self.triangles, dtype=np.int64)
        N = np.ascontiguousarray(self.normals, dtype=np.float64)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        if F.size and np.any((F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2])
                             | (F[:, 0] == F[:, 2])):
            raise ValueError("degenerate triangle (repeated vertex)")
        if N.shape != V.shape:
            raise ValueError("normals must match vertices")
        if len(N) and not np.all(np.abs(np.linalg.norm(N, axis=1) - 1.0) < 1e-6):
            raise ValueError("vertex normals must be unit length")
        for name, arr in (("vertices", V), ("triangles", F), ("normals", N)):
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class NormalAngleImage:
    """8-bit normal-angle rendering with a per-pixel 3D lookup.

    Pixels with no surface hit have gray 0 and NaN lookup.  The projection
    metadata (basis, origin of the pixel grid, resolution) is kept so 3D
    points can be mapped to pixel coordinates of this image.
    """
    width: int
    height: int
    gray: np.ndarray            # (H, W) uint8
    lookup: np.ndarray          # (H, W, 3) float32, NaN where empty
    axis_u: tuple = None
    axis_v: tuple = None
    view_axis: tuple = None
    grid_origin: tuple = None   # (a_min, b_min) in projected coords
    resolution: float = None    # mm per pixel

    def project(self, p) -> tuple:
        """Map a 3D point to fractional (u, v) pixel coordinates."""
        if self.axis_u is None:
            raise ValueError("image carries no projection metadata")
        p = np.asarray(p, dtype=np.float64)
        a = p @ np.asarray(self.axis_u)
        b = p @ np.asarray(self.axis_v)
        return ((a - self.grid_origin[0]) / self.resolution,
                (b - self.grid_origin[1]) / self.resolution)


def marching_cubes(vol: ScalarVolume, iso: float) -> TriangleMesh:
    """Extract the isosurface as a triangle mesh in world (mm) coordinates.

    Vertices shared between neighboring cells are merged, so closed
    surfaces come out watertight.  Vertex normals are the interpolated
    central-difference volume gradient, oriented toward decreasing values
    (outward for a solid stored as high values).
    """
    grid = vol.grid
    nx, ny, nz = vol.dims
    spacing = np.asarray(vol.spacing, dtype=np.float64)
    origin = np.asarray(vol.origin, dtype=np.float64)

    below = grid < iso
    # Bourke case index: bit i set when corner i is below iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= below[dx:dx + nx - 1, dy:dy + ny - 1, dz:dz + nz - 1].astype(np.int32) << bit
    active = np.argwhere((case > 0) & (case < 255))
    if active.size == 0:
        raise PipelineError("empty isosurface")

    # central-difference gradient per grid node, mm^-1 scaled
    gx, gy, gz = np.gradient(grid, *spacing)
    gradient = np.stack([gx, gy, gz], axis=-1)

    vert_ids: dict = {}
    verts: list = []
    norms: list = []
    tris: list = []

    def edge_vertex(cell, edge):
        ca, cb = EDGE_CORNERS[edge]
        ia = cell + CORNER_OFFSETS[ca]
        ib = cell + CORNER_OFFSETS[cb]
        axis = int(np.nonzero(ia != ib)[0][0])
        lo = ia if ia[axis] < ib[axis] else ib
        key = (int(lo[0]), int(lo[1]), int(lo[2]), axis)
        vid = vert_ids.get(key)
        if vid is not None:
            return vid
        va = grid[ia[0], ia[1], ia[2]]
        vb = grid[ib[0], ib[1], ib[2]]
        t = 0.5 if vb == va else (iso - va) / (vb - va)
        t = min(max(t, 0.0), 1.0)
        idx_pos = ia + t * (ib - ia)
        g = (1.0 - t) * gradient[ia[0], ia[1], ia[2]] + t * gradient[ib[0], ib[1], ib[2]]
        n = np.linalg.norm(g)
        normal = -g / n if n > 0 else np.array([0.0, 0.0, 1.0])
        vid = len(verts)
        verts.append(origin + idx_pos * spacing)
        norms.append(normal)
        vert_ids[key] = vid
        return vid

    # cells visited in fixed voxel-index order for deterministic output
    for cell in active:
        c = int(case[cell[0], cell[1], cell[2]])
        row = TRI_TABLE[c]
        for k in range(0, 16, 3):
            if row[k] < 0:
                break
            ids = (edge_vertex(cell, int(row[k])),
                   edge_vertex(cell, int(row[k + 1])),
                   edge_vertex(cell, int(row[k + 2])))
            if ids[0] == ids[1] or ids[1] == ids[2] or ids[0] == ids[2]:
                continue  # interpolation collapsed an edge
            tris.append(ids)

    return TriangleMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64),
                        np.asarray(norms))


def mesh_to_cloud(mesh: TriangleMesh) -> PointCloud:
    """Mesh vertices with their normals, order preserved."""
    if len(mesh.vertices) == 0:
        raise ValueError("empty mesh")
    return PointCloud(mesh.vertices, mesh.normals)


def estimate_normals(cloud: PointCloud, k: int = 20, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from k-NN covariance, oriented toward a viewpoint."""
    n = len(cloud)
    if n <= k:
        raise ValueError(f"cloud of {n} points too small for k={k}")
    vp = np.asarray(viewpoint, dtype=np.float64)
    tree = cKDTree(cloud.points)
    _, nbrs = tree.query(cloud.points, k=k + 1)
    normals = np.empty((n, 3))
    for i in range(n):
        pts = cloud.points[nbrs[i]]
        cov = np.cov(pts.T)
        w, v = np.linalg.eigh(cov)
        normal = v[:, 0]
        if normal @ (vp - cloud.points[i]) < 0:
            normal = -normal
        normals[i] = normal
    return PointCloud(cloud.points, normals)


def render_normal_angle_image(mesh: TriangleMesh, view_axis=(0.0, 0.0, 1.0),
                              resolution_mm_per_px: float = 1.0) -> NormalAngleImage:
    """Orthographic normal-angle rendering of a mesh along a view axis.

    Gray = round(255 * (1 - angle/90deg)) for front-facing normals, 0 past
    90 degrees.  The front-most sample (largest coordinate along the view
    axis, then lowest sample index) wins each pixel; triangles are sampled
    at sub-pixel density so the lookup has no holes.
    """
    if len(mesh.vertices) == 0:
        raise PipelineError("empty mesh")
    w_axis = np.asarray(view_axis, dtype=np.float64)
    if abs(np.linalg.norm(w_axis) - 1.0) > 1e-6:
        raise ValueError("view_axis must be unit length")
    helper = np.array([0.0, 1.0, 0.0])
    if abs(w_axis @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    u_axis = np.cross(helper, w_axis)
    u_axis /= np.linalg.norm(u_axis)
    v_axis = np.cross(w_axis, u_axis)

    res = float(resolution_mm_per_px)
    a = mesh.vertices @ u_axis
    b = mesh.vertices @ v_axis
    a_min, a_max = a.min(), a.max()
    b_min, b_max = b.min(), b.max()
    if a_max - a_min <= 0 or b_max - b_min <= 0:
        raise PipelineError("mesh projects to zero area")
    width = int(np.ceil((a_max - a_min) / res))
    height = int(np.ceil((b_max - b_min) / res))

    # sample each triangle on a barycentric lattice of pitch <= res/2
    tri_v = mesh.vertices[mesh.triangles]        # (M, 3, 3)
    tri_n = mesh.normals[mesh.triangles]
    e01 = np.linalg.norm(tri_v[:, 1] - tri_v[:, 0], axis=1)
    e02 = np.linalg.norm(tri_v[:, 2] - tri_v[:, 0], axis=1)
    e12 = np.linalg.norm(tri_v[:, 2] - tri_v[:, 1], axis=1)
    max_edge = np.maximum(np.maximum(e01, e02), e12)
    n_sub = np.maximum(1, np.ceil(max_edge / (res * 0.5))).astype(np.int64)

    pix_all, depth_all, order_all, pt_all, nrm_all = [], [], [], [], []
    # cumulative sample counts in original triangle order fix the global index
    samples_per_tri = (n_sub + 1) * (n_sub + 2) // 2
    tri_start = np.concatenate([[0], np.cumsum(samples_per_tri)])
    for n in np.unique(n_sub):
        sel = np.nonzero(n_sub == n)[0]
        ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = (ii + jj) <= n
        l1 = (ii[keep] / n).astype(np.float64)
        l2 = (jj[keep] / n).astype(np.float64)
        l0 = 1.0 - l1 - l2
        bary = np.stack([l0, l1, l2], axis=1)       # (S, 3)
        pts = np.einsum("sk,mkd->msd", bary, tri_v[sel])
        nrm = np.einsum("sk,mkd->msd", bary, tri_n[sel])
        s_count = bary.shape[0]
        local = np.arange(s_count)
        order = tri_start[sel][:, None] + local[None, :]
        pts = pts.reshape(-1, 3)
        nrm = nrm.reshape(-1, 3)
        pa = pts @ u_axis
        pb = pts @ v_axis
        col = np.clip(((pa - a_min) / res).astype(np.int64), 0, width - 1)
        row = np.clip(((pb - b_min) / res).astype(np.int64), 0, height - 1)
        pix_all.append(row * width + col)
        depth_all.append(pts @ w_axis)
        order_all.append(order.reshape(-1))
        pt_all.append(pts)
        nrm_all.append(nrm)

    pix = np.concatenate(pix_all)
    depth = np.concatenate(depth_all)
    order_key = np.concatenate(order_all)
    pts = np.concatenate(pt_all)
    nrm = np.concatenate(nrm_all)

    # winner per pixel: largest depth, then lowest global sample index
    order = np.lexsort((order_key, -depth, pix))
    _, first = np.unique(pix[order], return_index=True)
    win = order[first]

    gray = np.zeros(height * width, dtype=np.uint8)
    lookup = np.full((height * width, 3), np.nan, dtype=np.float32)
    win_n = nrm[win]
    lens = np.linalg.norm(win_n, axis=1)
    lens[lens == 0] = 1.0
    cosang = np.clip((win_n / lens[:, None]) @ w_axis, -1.0, 1.0)
    theta = np.degrees(np.arccos(cosang))
    g = np.where(theta >= 90.0, 0.0, np.rint(255.0 * (1.0 - theta / 90.0)))
    gray[pix[win]] = np.clip(g, 0, 255).astype(np.uint8)
    lookup[pix[win]] = pts[win].astype(np.float32)

    return NormalAngleImage(width=width, height=height,
                            gray=gray.reshape(height, width),
                            lookup=lookup.reshape(height, width, 3),
                            axis_u=tuple(u_axis), axis_v=tuple(v_axis),
                            view_axis=tuple(w_axis),
                            grid_origin=(float(a_min), float(b_min)),
                            resolution=res)


def backproject_landmarks(img: NormalAngleImage, lm) -> tuple:
    """Map 2D landmarks on a normal-angle image back to 3D surface points.

    A landmark on an empty pixel takes the nearest populated pixel within
    3 px; otherwise it is dropped.  Returns (cloud, surviving_indices) in
    landmark index order.
    """
    if (lm.image_width, lm.image_height) != (img.width, img.height):
        raise ValueError("landmark image dimensions do not match image")
    filled = ~np.isnan(img.lookup[:, :, 0])
    pts, survivors = [], []
    for idx, u, v in sorted(lm.landmarks):
        col = min(max(int(round(u)), 0), img.width - 1)
        row = min(max(int(round(v)), 0), img.height - 1)
        if not filled[row, col]:
            best = None
            for dr in range(-3, 4):
                for dc in range(-3, 4):
                    r2 = dr * dr + dc * dc
                    if r2 > 9:
                        continue
                    rr, cc = row + dr, col + dc
                    if 0 <= rr < img.height and 0 <= cc < img.width and filled[rr, cc]:
                        cand = (r2, rr, cc)
                        if best is None or cand < best:
                            best = cand
            if best is None:
                continue
            row, col = best[1], best[2]
        pts.append(img.lookup[row, col].astype(np.float64))
        survivors.append(idx)
    if not pts:
        raise PipelineError("no landmark could be back-projected")
    return PointCloud(np.asarray(pts)), survivors


# ---------------------------------------------------------------------------
# file I/O

def write_volume(path_prefix, vol: ScalarVolume) -> None:
    """Write <prefix>.raw (little-endian u16) and <prefix>.volume.json."""
    p = Path(path_prefix)
    v = np.clip(np.rint(vol.values), 0, 65535).astype("<u2")
    p.with_suffix(".raw").write_bytes(v.tobytes())
    meta = {"dims": list(vol.dims), "spacing": list(vol.spacing),
            "origin": list(vol.origin), "dtype": "u16"}
    p.with_suffix(".volume.json").write_text(json.dumps(meta, indent=2))


def read_volume(raw_path, meta_path=None) -> ScalarVolume:
    p = Path(raw_path)
    if meta_path is None:
        meta_path = p.with_suffix(".volume.json")
    try:
        meta = json.loads(Path(meta_path).read_text())
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta["origin"])
        if meta.get("dtype", "u16") != "u16":
            raise InputError(f"{meta_path}: unsupported dtype {meta['dtype']!r}")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise InputError(f"{meta_path}: bad volume sidecar: {e}") from e
    raw = np.frombuffer(p.read_bytes(), dtype="<u2")
    if raw.size != dims[0] * dims[1] * dims[2]:
        raise InputError(f"{raw_path}: raw size does not match dims {dims}")
    return ScalarVolume(dims=dims, spacing=spacing, origin=origin,
                        values=raw.astype(np.float64))


def write_normal_angle_image(path_prefix, img: NormalAngleImage) -> None:
    """Write <prefix>.pgm plus <prefix>.lookup.bin (H*W*3 float32 LE)."""
    from .depthio import write_pgm8
    p = Path(path_prefix)
    write_pgm8(p.with_suffix(".pgm"), img.gray)
    p.with_suffix(".lookup.bin").write_bytes(img.lookup.astype("<f4").tobytes())


def read_normal_angle_image(pgm_path, lookup_path=None) -> NormalAngleImage:
    from .depthio import read_pgm16
    p = Path(pgm_path)
    if lookup_path is None:
        lookup_path = p.with_suffix(".lookup.bin")
    gray = read_pgm16(p).astype(np.uint8)
    h, w = gray.shape
    lookup = np.frombuffer(Path(lookup_path).read_bytes(), dtype="<f4")
    if lookup.size != h * w * 3:
        raise InputError(f"{lookup_path}: lookup size does not match image")
    return NormalAngleImage(width=w, height=h, gray=gray,
                            lookup=lookup.reshape(h, w, 3).copy())
