"""Marching cubes, normal estimation, normal-angle rendering, volume I/O."""

import numpy as np
import pytest

from facereg import surface
from facereg.depthio import LandmarkSet
from facereg.errors import InputError, PipelineError
from facereg.geometry import PointCloud
from facereg.surface import (NormalAngleImage, ScalarVolume, TriangleMesh,
                             marching_cubes)


def sphere_volume(n=32, spacing=1.0, radius=10.0, inside_high=True):
    """Scalar grid of distance-derived values around a centered sphere."""
    half = (n - 1) * spacing / 2.0
    g = np.arange(n) * spacing - half
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    dist = np.sqrt(X ** 2 + Y ** 2 + Z ** 2)
    vals = (2.0 * radius - dist) if inside_high else dist
    flat = vals.transpose(2, 1, 0).reshape(-1)
    return ScalarVolume(dims=(n, n, n), spacing=(spacing,) * 3,
                        origin=(-half, -half, -half), values=flat)


def edge_incidence(mesh):
    """Map undirected edge -> number of triangles using it."""
    counts = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


class TestScalarVolume:
    def test_grid_axis_order(self):
        # flat storage is x fastest, z slowest
        vals = np.arange(2 * 3 * 4, dtype=np.float64)
        vol = ScalarVolume(dims=(2, 3, 4), spacing=(1, 1, 1),
                           origin=(0, 0, 0), values=vals)
        g = vol.grid
        assert g.shape == (2, 3, 4)
        assert g[1, 0, 0] == 1.0       # +x neighbor is adjacent in storage
        assert g[0, 1, 0] == 2.0       # +y strides by nx
        assert g[0, 0, 1] == 6.0       # +z strides by nx*ny

    def test_validation(self):
        with pytest.raises(ValueError):
            ScalarVolume(dims=(1, 3, 3), spacing=(1, 1, 1), origin=(0, 0, 0),
                         values=np.zeros(9))
        with pytest.raises(ValueError):
            ScalarVolume(dims=(2, 2, 2), spacing=(1, 1, 1), origin=(0, 0, 0),
                         values=np.zeros(7))


class TestMarchingCubes:
    def test_sphere_watertight_and_radius(self):
        vol = sphere_volume()
        mesh = marching_cubes(vol, 10.0)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert np.all(np.abs(radii - 10.0) < 0.5)
        counts = edge_incidence(mesh)
        assert all(c == 2 for c in counts.values())

    def test_normals_point_toward_decreasing_values(self):
        # inside-high solid: decreasing values point radially outward
        mesh = marching_cubes(sphere_volume(), 10.0)
        radial = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
        dots = np.sum(mesh.normals * radial, axis=1)
        assert np.all(dots > 0.9)

    def test_plane_iso_position_exact(self):
        # linear field in z: the isosurface must sit exactly at the iso plane
        n = 8
        g = np.arange(n, dtype=np.float64)
        X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
        vals = (10.0 - Z).transpose(2, 1, 0).reshape(-1)
        vol = ScalarVolume(dims=(n, n, n), spacing=(1, 1, 1),
                           origin=(0, 0, 0), values=vals)
        mesh = marching_cubes(vol, 6.5)
        assert np.allclose(mesh.vertices[:, 2], 3.5, atol=1e-12)

    def test_no_duplicate_vertices(self):
        mesh = marching_cubes(sphere_volume(n=16), 10.0)
        uniq = np.unique(np.round(mesh.vertices, 9), axis=0)
        assert len(uniq) == len(mesh.vertices)

    def test_empty_isosurface(self):
        vol = sphere_volume(n=8)
        with pytest.raises(PipelineError):
            marching_cubes(vol, 1e6)

    def test_world_coordinates_respect_origin_spacing(self):
        vol = sphere_volume(n=16, spacing=2.0, radius=10.0)
        mesh = marching_cubes(vol, 10.0)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert np.all(np.abs(radii - 10.0) < 1.0)


class TestTriangleMesh:
    def test_validation(self):
        v = np.zeros((3, 3))
        n = np.tile([0.0, 0.0, 1.0], (3, 1))
        with pytest.raises(ValueError):
            TriangleMesh(vertices=v, triangles=np.array([[0, 1, 5]]), normals=n)
        with pytest.raises(ValueError):
            TriangleMesh(vertices=v, triangles=np.array([[0, 1, 1]]), normals=n)
        with pytest.raises(ValueError):
            TriangleMesh(vertices=v, triangles=np.array([[0, 1, 2]]),
                         normals=n * 2.0)

    def test_mesh_to_cloud(self):
        v = np.arange(9, dtype=np.float64).reshape(3, 3)
        n = np.tile([0.0, 0.0, 1.0], (3, 1))
        mesh = TriangleMesh(vertices=v, triangles=np.array([[0, 1, 2]]), normals=n)
        cloud = surface.mesh_to_cloud(mesh)
        assert np.array_equal(cloud.points, v)
        assert np.array_equal(cloud.normals, n)


class TestEstimateNormals:
    def test_plane_normals(self, rng):
        pts = np.column_stack([rng.uniform(0, 20, 200),
                               rng.uniform(0, 20, 200),
                               np.zeros(200)])
        cloud = surface.estimate_normals(PointCloud(pts), k=10,
                                         viewpoint=(10.0, 10.0, 100.0))
        assert np.allclose(np.abs(cloud.normals[:, 2]), 1.0, atol=1e-9)
        # all oriented toward the viewpoint above the plane
        assert np.all(cloud.normals[:, 2] > 0)

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            surface.estimate_normals(PointCloud(rng.normal(size=(5, 3))), k=10)


def flat_plane_mesh(z=0.0, extent=20.0, step=2.0, nz=1.0):
    g = np.arange(0.0, extent + step, step)
    X, Y = np.meshgrid(g, g, indexing="ij")
    n = len(g)
    verts = np.column_stack([X.ravel(), Y.ravel(), np.full(n * n, z)])
    tris = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            tris.append([a, a + n, a + 1])
            tris.append([a + 1, a + n, a + n + 1])
    normals = np.tile([0.0, 0.0, nz], (n * n, 1))
    return TriangleMesh(vertices=verts, triangles=np.asarray(tris),
                        normals=normals)


class TestNormalAngleImage:
    def test_front_facing_plane_renders_white(self):
        img = surface.render_normal_angle_image(flat_plane_mesh(),
                                                view_axis=(0.0, 0.0, 1.0),
                                                resolution_mm_per_px=1.0)
        filled = ~np.isnan(img.lookup[:, :, 0])
        assert filled.all()
        assert np.all(img.gray[filled] == 255)

    def test_tilted_normal_gray_level(self):
        # normals at 45 degrees to the view axis: gray = 255 * (1 - 45/90)
        mesh = flat_plane_mesh()
        s = np.sqrt(0.5)
        tilted = TriangleMesh(vertices=mesh.vertices, triangles=mesh.triangles,
                              normals=np.tile([s, 0.0, s], (len(mesh.vertices), 1)))
        img = surface.render_normal_angle_image(tilted, view_axis=(0.0, 0.0, 1.0))
        filled = ~np.isnan(img.lookup[:, :, 0])
        assert np.all(img.gray[filled] == round(255 * 0.5))

    def test_back_facing_renders_black(self):
        img = surface.render_normal_angle_image(flat_plane_mesh(nz=-1.0),
                                                view_axis=(0.0, 0.0, 1.0))
        assert np.all(img.gray == 0)

    def test_lookup_and_project_consistent(self):
        img = surface.render_normal_angle_image(flat_plane_mesh())
        filled = np.argwhere(~np.isnan(img.lookup[:, :, 0]))
        for row, col in filled[:: max(1, len(filled) // 20)]:
            p = img.lookup[row, col]
            u, v = img.project(p)
            assert int(u) == col and int(v) == row

    def test_front_most_surface_wins(self):
        near = flat_plane_mesh(z=5.0)
        far = flat_plane_mesh(z=0.0)
        n_v = len(near.vertices)
        both = TriangleMesh(
            vertices=np.vstack([far.vertices, near.vertices]),
            triangles=np.vstack([far.triangles, near.triangles + n_v]),
            normals=np.vstack([far.normals, near.normals]))
        img = surface.render_normal_angle_image(both, view_axis=(0.0, 0.0, 1.0))
        filled = ~np.isnan(img.lookup[:, :, 0])
        assert np.all(img.lookup[:, :, 2][filled] == 5.0)

    def test_requires_unit_view_axis(self):
        with pytest.raises(ValueError):
            surface.render_normal_angle_image(flat_plane_mesh(),
                                              view_axis=(0.0, 0.0, 2.0))

    def test_deterministic(self):
        a = surface.render_normal_angle_image(flat_plane_mesh())
        b = surface.render_normal_angle_image(flat_plane_mesh())
        assert np.array_equal(a.gray, b.gray)
        assert np.array_equal(a.lookup, b.lookup, equal_nan=True)


class TestBackprojectLandmarks:
    def make_image(self):
        return surface.render_normal_angle_image(flat_plane_mesh(z=3.0))

    def test_exact_pixel(self):
        img = self.make_image()
        lm = LandmarkSet(img.width, img.height, ((30, 4.0, 6.0),))
        cloud, kept = surface.backproject_landmarks(img, lm)
        assert kept == [30]
        assert np.isclose(cloud.points[0][2], 3.0)

    def test_nearest_fallback_and_drop(self):
        img = self.make_image()
        # empty border pixel within 3 px of content survives via fallback
        gray = img.gray.copy()
        lookup = img.lookup.copy()
        lookup[:, :3, :] = np.nan
        img2 = NormalAngleImage(width=img.width, height=img.height,
                                gray=gray, lookup=lookup,
                                axis_u=img.axis_u, axis_v=img.axis_v,
                                view_axis=img.view_axis,
                                grid_origin=img.grid_origin,
                                resolution=img.resolution)
        lm = LandmarkSet(img.width, img.height,
                         ((30, 1.0, 6.0),))
        cloud, kept = surface.backproject_landmarks(img2, lm)
        assert kept == [30]
        assert np.isclose(cloud.points[0][0], lookup[6, 3, 0])

    def test_dimension_mismatch(self):
        img = self.make_image()
        lm = LandmarkSet(img.width + 5, img.height, ((30, 1.0, 1.0),))
        with pytest.raises(ValueError):
            surface.backproject_landmarks(img, lm)


class TestVolumeIO:
    def test_round_trip(self, tmp_path):
        vol = sphere_volume(n=8)
        surface.write_volume(tmp_path / "vol", vol)
        back = surface.read_volume(tmp_path / "vol.raw")
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        assert back.origin == vol.origin
        assert np.array_equal(back.values, np.rint(vol.values))

    def test_size_mismatch(self, tmp_path):
        vol = sphere_volume(n=8)
        surface.write_volume(tmp_path / "vol", vol)
        (tmp_path / "vol.raw").write_bytes(b"\x00\x00" * 10)
        with pytest.raises(InputError):
            surface.read_volume(tmp_path / "vol.raw")


class TestNormalAngleImageIO:
    def test_round_trip(self, tmp_path):
        img = surface.render_normal_angle_image(flat_plane_mesh())
        surface.write_normal_angle_image(tmp_path / "img", img)
        back = surface.read_normal_angle_image(tmp_path / "img.pgm")
        assert np.array_equal(back.gray, img.gray)
        assert np.allclose(back.lookup, img.lookup, equal_nan=True)
