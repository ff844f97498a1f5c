"""PLY reader/writer round trips and foreign-file handling."""

import numpy as np
import pytest

from facereg import ply
from facereg.errors import InputError
from facereg.geometry import PointCloud


def test_cloud_round_trip_binary(tmp_path, rng):
    pts = rng.uniform(-100.0, 100.0, size=(30, 3))
    path = tmp_path / "cloud.ply"
    ply.write_cloud(path, PointCloud(pts))
    back = ply.read_cloud(path)
    # storage is float32
    assert np.allclose(back.points, pts, atol=1e-4)
    assert back.normals is None


def test_cloud_round_trip_ascii(tmp_path, rng):
    pts = rng.normal(size=(12, 3))
    path = tmp_path / "cloud.ply"
    ply.write_cloud(path, PointCloud(pts), binary=False)
    back = ply.read_cloud(path)
    assert np.allclose(back.points, pts, atol=1e-5)


def test_cloud_with_normals(tmp_path, rng):
    pts = rng.normal(size=(15, 3))
    nrm = rng.normal(size=(15, 3))
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    path = tmp_path / "cloud.ply"
    ply.write_cloud(path, PointCloud(pts, nrm))
    back = ply.read_cloud(path)
    assert back.normals is not None
    # normals renormalized after float32 storage
    assert np.allclose(np.linalg.norm(back.normals, axis=1), 1.0, atol=1e-12)
    assert np.allclose(back.normals, nrm, atol=1e-5)


@pytest.mark.parametrize("binary", [True, False])
def test_mesh_round_trip(tmp_path, rng, binary):
    verts = rng.normal(size=(8, 3)) * 10.0
    nrm = np.tile([0.0, 0.0, 1.0], (8, 1))
    tris = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6]])
    path = tmp_path / "mesh.ply"
    ply.write_mesh(path, verts, nrm, tris, binary=binary)
    v, n, f = ply.read_mesh(path)
    assert np.allclose(v, verts, atol=1e-4)
    assert np.allclose(n, nrm, atol=1e-6)
    assert np.array_equal(f, tris)


def test_read_mesh_requires_faces(tmp_path, rng):
    path = tmp_path / "cloud.ply"
    ply.write_cloud(path, PointCloud(rng.normal(size=(5, 3))))
    with pytest.raises(InputError):
        ply.read_mesh(path)


def test_quad_faces_fan_triangulated(tmp_path):
    text = "\n".join([
        "ply", "format ascii 1.0",
        "element vertex 4",
        "property float x", "property float y", "property float z",
        "element face 1",
        "property list uchar int vertex_indices",
        "end_header",
        "0 0 0", "1 0 0", "1 1 0", "0 1 0",
        "4 0 1 2 3", ""])
    path = tmp_path / "quad.ply"
    path.write_bytes(text.encode())
    _, _, f = ply.read_mesh(path)
    assert np.array_equal(f, [[0, 1, 2], [0, 2, 3]])


def test_foreign_double_precision_and_extra_props(tmp_path):
    # other tools emit doubles and extra per-vertex columns
    text = "\n".join([
        "ply", "format ascii 1.0",
        "comment exported elsewhere",
        "element vertex 2",
        "property double x", "property double y", "property double z",
        "property float quality",
        "end_header",
        "1.5 2.5 3.5 0.9", "4.0 5.0 6.0 0.1", ""])
    path = tmp_path / "foreign.ply"
    path.write_bytes(text.encode())
    cloud = ply.read_cloud(path)
    assert np.allclose(cloud.points, [[1.5, 2.5, 3.5], [4.0, 5.0, 6.0]])


def test_not_a_ply(tmp_path):
    path = tmp_path / "junk.ply"
    path.write_bytes(b"OFF\n3 1 0\n")
    with pytest.raises(InputError):
        ply.read_cloud(path)


def test_missing_xyz(tmp_path):
    text = "\n".join([
        "ply", "format ascii 1.0",
        "element vertex 1",
        "property float a", "property float b", "property float c",
        "end_header", "1 2 3", ""])
    path = tmp_path / "bad.ply"
    path.write_bytes(text.encode())
    with pytest.raises(InputError):
        ply.read_cloud(path)
