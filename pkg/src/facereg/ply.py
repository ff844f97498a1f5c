"""PLY point-cloud and mesh I/O.

Supports ascii and binary_little_endian encodings; vertices carry x, y, z
as float32 with optional nx, ny, nz.  The writer defaults to binary.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .geometry import PointCloud


def write_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write a point cloud as a PLY vertex element."""
    _write(path, cloud.points, cloud.normals, None, binary)


def read_cloud(path) -> PointCloud:
    """Read a PLY file's vertex element as a point cloud (faces ignored)."""
    pts, nrm, _ = _read(path)
    if nrm is not None:
        # renormalize: float32 storage loses a few digits
        lengths = np.linalg.norm(nrm, axis=1)
        if np.any(lengths <= 0):
            nrm = None
        else:
            nrm = nrm / lengths[:, None]
    return PointCloud(pts, nrm)


def write_mesh(path, vertices, normals, triangles, binary: bool = True) -> None:
    """Write vertices (+normals) and a triangle face element."""
    _write(path, np.asarray(vertices), np.asarray(normals),
           np.asarray(triangles, dtype=np.int32), binary)


def read_mesh(path):
    """Read vertices, normals and triangles; returns (V, N, F) arrays."""
    pts, nrm, tris = _read(path)
    if tris is None:
        raise InputError(f"{path}: no face element in mesh file")
    return pts, nrm, tris


def _write(path, points, normals, triangles, binary):
    n = points.shape[0]
    props = ["property float x", "property float y", "property float z"]
    cols = [points]
    if normals is not None:
        props += ["property float nx", "property float ny", "property float nz"]
        cols.append(normals)
    data = np.hstack(cols).astype("<f4")
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"] + props
    if triangles is not None:
        header += [f"element face {triangles.shape[0]}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(data.tobytes())
            if triangles is not None:
                face = np.empty(triangles.shape[0],
                                dtype=[("n", "u1"), ("v", "<i4", (3,))])
                face["n"] = 3
                face["v"] = triangles
                f.write(face.tobytes())
        else:
            for row in data:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode())
            if triangles is not None:
                for tri in triangles:
                    f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode())


def _read(path):
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise InputError(f"{path}: not a PLY file")
    end = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, type) or ('__list__', ...)])
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append(("scalar", parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise InputError(f"{path}: unsupported PLY format {fmt!r}")

    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
                "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
                "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
                "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4"}

    pts = nrm = tris = None
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            if any(p[0] == "list" for p in props):
                rows = []
                for _ in range(count):
                    n = int(tokens[pos]); pos += 1
                    rows.append([int(t) for t in tokens[pos:pos + n]])
                    pos += n
                if name == "face":
                    tris = _fan_triangulate(rows)
            else:
                names = [p[2] for p in props]
                vals = np.array(tokens[pos:pos + count * len(props)],
                                dtype=np.float64).reshape(count, len(props))
                pos += count * len(props)
                if name == "vertex":
                    pts, nrm = _split_vertex(vals, names, path)
    else:
        offset = 0
        for name, count, props in elements:
            if any(p[0] == "list" for p in props):
                if len(props) != 1:
                    raise InputError(f"{path}: mixed list/scalar element unsupported")
                _, count_t, item_t, _ = props[0]
                cdt = np.dtype(type_map[count_t])
                idt = np.dtype(type_map[item_t])
                rows = []
                for _ in range(count):
                    n = int(np.frombuffer(body, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    rows.append(np.frombuffer(body, idt, n, offset).tolist())
                    offset += idt.itemsize * n
                if name == "face":
                    tris = _fan_triangulate(rows)
            else:
                dt = np.dtype([(p[2], type_map[p[1]]) for p in props])
                rec = np.frombuffer(body, dt, count, offset)
                offset += dt.itemsize * count
                if name == "vertex":
                    names = [p[2] for p in props]
                    vals = np.stack([rec[nm].astype(np.float64) for nm in names], axis=1)
                    pts, nrm = _split_vertex(vals, names, path)
    if pts is None:
        raise InputError(f"{path}: no vertex element")
    return pts, nrm, tris


def _split_vertex(vals, names, path):
    try:
        xyz = [names.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise InputError(f"{path}: vertex element missing x/y/z") from None
    pts = vals[:, xyz]
    nrm = None
    if all(c in names for c in ("nx", "ny", "nz")):
        nrm = vals[:, [names.index(c) for c in ("nx", "ny", "nz")]]
    return pts, nrm


def _fan_triangulate(rows):
    tris = []
    for row in rows:
        for i in range(1, len(row) - 1):
            tris.append([row[0], row[i], row[i + 1]])
    return np.asarray(tris, dtype=np.int64) if tris else np.zeros((0, 3), np.int64)
