import math

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers
from rest_framework.exceptions import APIException

from core.camera import CameraIntrinsics, Frame, project, project_points, unproject, unproject_pixels
from core.exceptions import BehindCamera, EmptyMask, InvalidDepth, InvalidFrame, OutOfBounds
from core.geometry import (
    Action, Gripper, RigidTransform, clamp_delta, compose, inverse, magnitude, symmetric_yaw_error,
)
from core.serializers import ActionSerializer, RigidTransformSerializer, load_instance, parse_json, render_json


def make_frame(depth, intrinsics, ids=None):
    height, width = depth.shape
    return Frame(
        rgb=np.zeros((height, width, 3)),
        depth=depth,
        object_ids=np.zeros((height, width), dtype=np.int32) if ids is None else ids,
        intrinsics=intrinsics,
    )


class CameraTests(SimpleTestCase):
    def setUp(self):
        self.intrinsics = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=101, height=101)

    def test_unproject_principal_point(self):
        depth = np.full((101, 101), 2.0)
        point = unproject(make_frame(depth, self.intrinsics), (50, 50))
        np.testing.assert_allclose(point, [0.0, 0.0, 2.0])

    def test_unproject_direct_substitution(self):
        intrinsics = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=200, height=101)
        depth = np.ones((101, 200))
        point = unproject(make_frame(depth, intrinsics), (150, 50))
        np.testing.assert_allclose(point, [1.0, 0.0, 1.0])

    def test_unproject_errors(self):
        depth = np.ones((101, 101))
        depth[10, 20] = 0.0
        frame = make_frame(depth, self.intrinsics)
        with self.assertRaises(InvalidDepth):
            unproject(frame, (20, 10))
        with self.assertRaises(OutOfBounds):
            unproject(frame, (101, 3))
        with self.assertRaises(OutOfBounds):
            unproject(frame, (-1, 3))

    def test_project(self):
        self.assertEqual(project(self.intrinsics, (0.0, 0.0, 1.0)), (50.0, 50.0))
        self.assertEqual(project(self.intrinsics, (1.0, 0.0, 1.0)), (150.0, 50.0))
        with self.assertRaises(BehindCamera):
            project(self.intrinsics, (0.0, 0.0, 0.0))

    def test_round_trip_random(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            width, height = int(rng.integers(8, 200)), int(rng.integers(8, 200))
            intrinsics = CameraIntrinsics(
                fx=float(rng.uniform(20, 500)), fy=float(rng.uniform(20, 500)),
                cx=float(rng.uniform(0, width - 1)), cy=float(rng.uniform(0, height - 1)),
                width=width, height=height,
            )
            pixel = (int(rng.integers(0, width)), int(rng.integers(0, height)))
            depth = np.zeros((height, width))
            depth[pixel[1], pixel[0]] = rng.uniform(0.05, 5.0)
            x, y = project(intrinsics, unproject(make_frame(depth, intrinsics), pixel))
            self.assertAlmostEqual(x, pixel[0], delta=1e-6)
            self.assertAlmostEqual(y, pixel[1], delta=1e-6)

    def test_vectorised_matches_scalar(self):
        xs = np.array([3.0, 40.5, 77.0])
        ys = np.array([9.0, 50.0, 100.0])
        points = unproject_pixels(self.intrinsics, xs, ys, np.array([0.5, 1.0, 2.5]))
        px, py = project_points(self.intrinsics, points)
        np.testing.assert_allclose(px, xs)
        np.testing.assert_allclose(py, ys)
        px, _ = project_points(self.intrinsics, np.array([[0.0, 0.0, -1.0]]))
        self.assertTrue(np.isnan(px[0]))

    def test_frame_invariants(self):
        depth = np.ones((101, 101))
        ids = np.zeros((101, 101), dtype=np.int32)
        ids[5, 5] = 2
        depth[5, 5] = 0.0
        with self.assertRaises(InvalidFrame):
            make_frame(depth, self.intrinsics, ids)
        with self.assertRaises(InvalidFrame):
            make_frame(-np.ones((101, 101)), self.intrinsics)
        with self.assertRaises(InvalidFrame):
            make_frame(np.ones((10, 10)), self.intrinsics)

    def test_frame_is_read_only(self):
        frame = make_frame(np.ones((101, 101)), self.intrinsics)
        with self.assertRaises(ValueError):
            frame.depth[0, 0] = 3.0

    def test_invalid_intrinsics(self):
        with self.assertRaises(InvalidFrame):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)
        with self.assertRaises(InvalidFrame):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=4.0, cy=1.0, width=4, height=4)


def random_transform(rng):
    return RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))


class RigidTransformTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_identity_element(self):
        t = random_transform(self.rng)
        composed = compose(RigidTransform.identity(), t)
        np.testing.assert_allclose(composed.matrix, t.matrix, atol=1e-12)

    def test_quarter_turns_add(self):
        quarter = RigidTransform.from_yaw(math.pi / 2)
        half = compose(quarter, quarter)
        np.testing.assert_allclose(half.matrix, RigidTransform.from_yaw(math.pi).matrix, atol=1e-12)

    def test_inverse_gives_identity(self):
        for _ in range(100):
            t = random_transform(self.rng)
            np.testing.assert_allclose(compose(t, inverse(t)).matrix, np.eye(4), atol=1e-9)

    def test_associativity_against_matrix_product(self):
        for _ in range(100):
            a, b, c = (random_transform(self.rng) for _ in range(3))
            expected = a.matrix @ b.matrix @ c.matrix
            np.testing.assert_allclose(compose(compose(a, b), c).matrix, expected, atol=1e-9)
            np.testing.assert_allclose(compose(a, compose(b, c)).matrix, expected, atol=1e-9)

    def test_orthonormal_after_long_chain(self):
        t = RigidTransform.identity()
        for _ in range(1000):
            t = compose(t, random_transform(self.rng))
        rotation = t.rotation
        self.assertLess(np.abs(rotation.T @ rotation - np.eye(3)).max(), 1e-9)
        self.assertAlmostEqual(np.linalg.det(rotation), 1.0, delta=1e-9)

    def test_canonical_quaternion(self):
        t = RigidTransform((0.0, 0.0, 0.0, -1.0))
        self.assertEqual(t.quaternion, (0.0, 0.0, 0.0, 1.0))
        self.assertEqual(t, RigidTransform.identity())

    def test_yaw(self):
        self.assertAlmostEqual(RigidTransform.from_yaw(0.7).yaw, 0.7)
        self.assertAlmostEqual(RigidTransform.looking_down(-1.2, (0, 0, 1)).yaw, -1.2)

    def test_apply(self):
        t = RigidTransform.from_yaw(math.pi / 2, (0.0, 0.0, 0.1))
        np.testing.assert_allclose(t.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.1], atol=1e-12)


class MagnitudeTests(SimpleTestCase):
    def test_identity(self):
        size = magnitude(RigidTransform.identity())
        self.assertEqual(size.translation_norm, 0.0)
        self.assertEqual(size.rotation_angle, 0.0)

    def test_pure_translation(self):
        size = magnitude(RigidTransform(translation=(0.03, 0.04, 0.0)))
        self.assertAlmostEqual(size.translation_norm, 0.05)
        self.assertEqual(size.rotation_angle, 0.0)

    def test_quarter_turn(self):
        size = magnitude(RigidTransform.from_yaw(math.pi / 2))
        self.assertAlmostEqual(size.rotation_angle, math.pi / 2)

    def test_inverse_preserves_magnitude(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            t = random_transform(rng)
            a, b = magnitude(t), magnitude(inverse(t))
            self.assertAlmostEqual(a.translation_norm, b.translation_norm, places=12)
            self.assertAlmostEqual(a.rotation_angle, b.rotation_angle, places=12)
            self.assertLessEqual(a.rotation_angle, math.pi)

    def test_clamp_delta(self):
        delta = RigidTransform.from_rotvec((0.0, 0.0, 0.5), (0.1, 0.0, 0.0))
        clamped = magnitude(clamp_delta(delta, 0.02, 0.1))
        self.assertLessEqual(clamped.translation_norm, 0.02)
        self.assertLessEqual(clamped.rotation_angle, 0.1)
        small = RigidTransform(translation=(0.001, 0.0, 0.0))
        self.assertEqual(clamp_delta(small, 0.02, 0.1), small)

    def test_symmetric_yaw_error(self):
        self.assertAlmostEqual(symmetric_yaw_error(0.1, math.pi + 0.1, math.pi), 0.0)
        self.assertAlmostEqual(symmetric_yaw_error(0.0, 0.3, 2 * math.pi), 0.3)
        self.assertEqual(symmetric_yaw_error(0.0, 2.0, None), 0.0)


class SerializerTests(SimpleTestCase):
    def test_action_round_trip(self):
        action = Action(RigidTransform.from_rotvec((0.1, 0.2, 0.3), (1.0, 2.0, 3.0)), Gripper.CLOSE)
        payload = parse_json(render_json(ActionSerializer(action).data))
        self.assertEqual(load_instance(ActionSerializer, payload), action)

    def test_rejects_bad_quaternion(self):
        with self.assertRaises(serializers.ValidationError):
            load_instance(RigidTransformSerializer, {'quaternion': [0, 0, 0], 'translation': [0, 0, 0]})
        with self.assertRaises(serializers.ValidationError):
            load_instance(RigidTransformSerializer, {'quaternion': [0, 0, 0, 0], 'translation': [0, 0, 0]})


class ErrorTests(SimpleTestCase):
    def test_defaults(self):
        error = EmptyMask()
        self.assertIsInstance(error, APIException)
        self.assertEqual(error.code, 'empty_mask')
        self.assertEqual(str(error), EmptyMask.default_detail)

    def test_explicit_detail_and_code(self):
        error = OutOfBounds('pixel (70, 3) is outside', code='custom')
        self.assertEqual(error.detail, 'pixel (70, 3) is outside')
        self.assertEqual(error.code, 'custom')
