"""Depth-frame ingestion, landmark lifting, segmentation, PGM round trips."""

import numpy as np
import pytest

from facereg import depthio
from facereg.depthio import (CameraIntrinsics, DepthFrame, LandmarkSet,
                             EYES_NOSE_INDICES)
from facereg.errors import InputError, PipelineError
from facereg.geometry import PointCloud

K = CameraIntrinsics(fx=500.0, fy=480.0, cx=32.0, cy=24.0, depth_scale=0.001)


def make_frame(depth):
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    return DepthFrame(width=w, height=h, depth=depth, intrinsics=K)


class TestBackProjection:
    def test_pinhole_formula(self):
        depth = np.zeros((48, 64))
        depth[10, 20] = 400.0      # raw units = mm at depth_scale 0.001
        cloud = depthio.depth_to_cloud(make_frame(depth))
        assert len(cloud) == 1
        z = 400.0 * 0.001 * 1000.0
        x = (20 - K.cx) * z / K.fx
        y = (10 - K.cy) * z / K.fy
        assert np.allclose(cloud.points[0], [x, y, z], atol=1e-12)

    def test_row_major_valid_order(self):
        depth = np.zeros((4, 4))
        depth[2, 1] = 100.0
        depth[0, 3] = 100.0
        cloud = depthio.depth_to_cloud(make_frame(depth))
        # pixel (0, 3) comes before (2, 1) in row-major order
        assert cloud.points[0][1] < cloud.points[1][1]

    def test_empty_frame(self):
        with pytest.raises(PipelineError):
            depthio.depth_to_cloud(make_frame(np.zeros((4, 4))))


class TestLandmarkSet:
    def test_validation(self):
        with pytest.raises(ValueError):
            LandmarkSet(10, 10, ((70, 1.0, 1.0),))       # index out of range
        with pytest.raises(ValueError):
            LandmarkSet(10, 10, ((5, 1.0, 1.0), (5, 2.0, 2.0)))  # duplicate
        with pytest.raises(ValueError):
            LandmarkSet(10, 10, ((5, 11.0, 1.0),))       # outside image

    def test_select_eyes_nose(self):
        entries = tuple((i, 1.0, 1.0) for i in (0, 17, 27, 36, 47, 48, 67))
        lm = depthio.select_eyes_nose(LandmarkSet(10, 10, entries))
        assert sorted(i for i, _, _ in lm.landmarks) == [27, 36, 47]
        assert EYES_NOSE_INDICES == frozenset(range(27, 48))

    def test_json_round_trip(self, tmp_path):
        lm = LandmarkSet(64, 48, ((27, 10.5, 20.25), (36, 30.0, 40.0)))
        path = tmp_path / "lm.json"
        depthio.write_landmarks(path, lm)
        back = depthio.read_landmarks(path)
        assert back.landmarks == lm.landmarks
        assert (back.image_width, back.image_height) == (64, 48)


class TestLiftLandmarks:
    def test_direct_hit(self):
        depth = np.full((48, 64), 300.0)
        lm = LandmarkSet(64, 48, ((30, 20.0, 10.0),))
        cloud, kept = depthio.lift_landmarks(make_frame(depth), lm)
        assert kept == [30]
        z = 300.0
        assert np.allclose(cloud.points[0],
                           [(20.0 - K.cx) * z / K.fx, (10.0 - K.cy) * z / K.fy, z])

    def test_window_median_fallback(self):
        depth = np.full((48, 64), 250.0)
        depth[10, 20] = 0.0        # landmark lands on a hole
        lm = LandmarkSet(64, 48, ((30, 20.0, 10.0),))
        cloud, kept = depthio.lift_landmarks(make_frame(depth), lm)
        assert kept == [30]
        assert np.isclose(cloud.points[0][2], 250.0)

    def test_dropped_when_window_empty(self):
        depth = np.zeros((48, 64))
        depth[40, 50] = 200.0
        lm = LandmarkSet(64, 48, ((30, 20.0, 10.0), (40, 50.0, 40.0)))
        cloud, kept = depthio.lift_landmarks(make_frame(depth), lm)
        assert kept == [40]
        assert len(cloud) == 1

    def test_all_dropped_raises(self):
        depth = np.zeros((48, 64))
        depth[40, 50] = 200.0
        lm = LandmarkSet(64, 48, ((30, 5.0, 5.0),))
        with pytest.raises(PipelineError):
            depthio.lift_landmarks(make_frame(depth), lm)

    def test_even_window_rejected(self):
        depth = np.full((48, 64), 250.0)
        lm = LandmarkSet(64, 48, ((30, 20.0, 10.0),))
        with pytest.raises(ValueError):
            depthio.lift_landmarks(make_frame(depth), lm, window=4)


class TestSegmentation:
    def test_box_with_margin_inclusive(self):
        pts = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [21.0, 0.0, 0.0],
                        [20.0, 0.0, 0.0], [-10.0, 0.0, 0.0]])
        kp = PointCloud(np.array([[5.0, 0.0, 0.0], [10.0, 0.0, 0.0]]))
        seg = depthio.segment_region(PointCloud(pts), kp, margin_mm=10.0)
        # box is [-5, 20]; the boundary point at 20 stays, 21 and -10 go
        assert np.array_equal(seg.points[:, 0], [0.0, 10.0, 20.0])

    def test_empty_result_raises(self):
        cloud = PointCloud(np.array([[100.0, 100.0, 100.0]]))
        kp = PointCloud(np.zeros((1, 3)))
        with pytest.raises(PipelineError):
            depthio.segment_region(cloud, kp, margin_mm=1.0)


class TestPgmIO:
    def test_pgm16_round_trip(self, tmp_path, rng):
        data = rng.integers(0, 65536, size=(13, 17)).astype(np.uint16)
        path = tmp_path / "img.pgm"
        depthio.write_pgm16(path, data)
        assert np.array_equal(depthio.read_pgm16(path), data)

    def test_pgm16_big_endian_samples(self, tmp_path):
        path = tmp_path / "img.pgm"
        depthio.write_pgm16(path, np.array([[0x0102]], dtype=np.uint16))
        raw = path.read_bytes()
        assert raw.endswith(b"\x01\x02")

    def test_pgm_comment_header(self, tmp_path):
        path = tmp_path / "img.pgm"
        body = np.array([[7, 8], [9, 10]], dtype=">u2").tobytes()
        path.write_bytes(b"P5\n# a comment\n2 2\n65535\n" + body)
        assert np.array_equal(depthio.read_pgm16(path), [[7, 8], [9, 10]])

    def test_pgm_8bit_promoted(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n2 1\n255\n\x05\x09")
        assert np.array_equal(depthio.read_pgm16(path), [[5, 9]])

    def test_not_pgm(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(InputError):
            depthio.read_pgm16(path)

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            depthio.write_pgm16(tmp_path / "img.pgm", np.array([[70000]]))


class TestDepthFrameIO:
    def test_round_trip(self, tmp_path):
        depth = np.zeros((8, 6))
        depth[3, 2] = 412.0
        frame = make_frame(depth)
        depthio.write_depth_frame(tmp_path / "frame", frame)
        back = depthio.read_depth_frame(tmp_path / "frame.pgm")
        assert back.width == 6 and back.height == 8
        assert np.array_equal(back.depth, depth)
        assert back.intrinsics == K

    def test_bad_sidecar(self, tmp_path):
        depthio.write_depth_frame(tmp_path / "frame", make_frame(np.ones((2, 2))))
        (tmp_path / "frame.intrinsics.json").write_text("{\"fx\": 1.0}")
        with pytest.raises(InputError):
            depthio.read_depth_frame(tmp_path / "frame.pgm")
