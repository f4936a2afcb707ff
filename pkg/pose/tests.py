import math

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from core.camera import CameraIntrinsics, Frame
from core.exceptions import DegenerateConfiguration, EmptyMask, NoConsensus, TooFewPoints
from core.geometry import RigidTransform, compose, inverse, magnitude
from pose.estimation import (
    Correspondence3D, CorrespondenceSet, Fitter, RansacConfig, correspondences_to_3d, fit_rigid,
    least_squares_rigid, ransac_rigid,
)


def random_transform(rng, translation_scale=0.2):
    return RigidTransform.from_rotation(Rotation.random(random_state=rng), rng.normal(size=3) * translation_scale)


def transform_error(a, b):
    size = magnitude(compose(inverse(a), b))
    return size.translation_norm, size.rotation_angle


def brute_force_fit(demo, live):
    """Independent minimizer: coarse rotation-vector grid, then BFGS over all six parameters."""
    def cost(params):
        rotation = Rotation.from_rotvec(params[:3]).as_matrix()
        return np.sum((demo @ rotation.T + params[3:] - live) ** 2)

    axis = np.linspace(-math.pi, math.pi, 7)
    best = None
    for rx in axis:
        for ry in axis:
            for rz in axis:
                rotvec = np.array([rx, ry, rz])
                rotation = Rotation.from_rotvec(rotvec).as_matrix()
                shift = np.mean(live - demo @ rotation.T, axis=0)
                params = np.concatenate([rotvec, shift])
                value = cost(params)
                if best is None or value < best[0]:
                    best = (value, params)
    result = minimize(cost, best[1], method='BFGS', options={'gtol': 1e-12})
    return RigidTransform.from_rotvec(result.x[:3], result.x[3:]), result.fun


def make_frame(depth):
    height, width = depth.shape
    intrinsics = CameraIntrinsics(fx=40.0, fy=40.0, cx=width / 2, cy=height / 2, width=width, height=height)
    return Frame(np.zeros((height, width, 3)), depth, np.zeros((height, width), dtype=np.int32), intrinsics)


class CorrespondencesTo3DTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.frame = make_frame(rng.uniform(0.3, 0.5, size=(24, 32)))

    def test_identity_flow(self):
        mask = np.zeros((24, 32), dtype=bool)
        mask[5, 3:13] = True
        corrs = correspondences_to_3d(self.frame, self.frame, mask, np.zeros((24, 32, 2)))
        self.assertEqual(len(corrs), 10)
        np.testing.assert_array_equal(corrs.demo_points, corrs.live_points)
        self.assertTrue(all(c.weight == 1.0 for c in corrs))

    def test_drops_invalid_targets(self):
        mask = np.zeros((24, 32), dtype=bool)
        mask[5, 3:13] = True
        flow = np.zeros((24, 32, 2))
        flow[5, 3:8, 0] = 100.0
        corrs = correspondences_to_3d(self.frame, self.frame, mask, flow)
        self.assertEqual(len(corrs), 5)

    def test_all_targets_outside(self):
        mask = np.ones((24, 32), dtype=bool)
        flow = np.full((24, 32, 2), 500.0)
        with self.assertRaises(EmptyMask):
            correspondences_to_3d(self.frame, self.frame, mask, flow)

    def test_live_depth_sampled_at_nearest_pixel(self):
        mask = np.zeros((24, 32), dtype=bool)
        mask[10, 10] = True
        flow = np.zeros((24, 32, 2))
        flow[10, 10] = (0.3, 0.0)
        corrs = correspondences_to_3d(self.frame, self.frame, mask, flow)
        self.assertEqual(corrs.live_points[0, 2], np.float64(self.frame.depth[10, 10]))


class LeastSquaresRigidTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_identity(self):
        points = self.rng.normal(size=(5, 3))
        report = least_squares_rigid(CorrespondenceSet(points, points))
        np.testing.assert_allclose(report.transform.matrix, np.eye(4), atol=1e-12)
        self.assertAlmostEqual(report.rms_residual, 0.0, places=12)
        self.assertEqual(report.inlier_count, report.total_count)

    def test_constructed_exact_case(self):
        demo = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
        truth = RigidTransform.from_yaw(math.pi / 2, (0.0, 0.0, 0.1))
        corrs = [Correspondence3D(p, tuple(truth.apply(p))) for p in demo]
        report = least_squares_rigid(corrs)
        np.testing.assert_allclose(report.transform.matrix, truth.matrix, atol=1e-9)

    def test_random_noiseless(self):
        for _ in range(500):
            truth = random_transform(self.rng)
            demo = self.rng.normal(size=(10, 3)) * 0.1
            report = least_squares_rigid(CorrespondenceSet(demo, truth.apply(demo)))
            translation_error, rotation_error = transform_error(truth, report.transform)
            self.assertLess(translation_error, 1e-9)
            self.assertLess(rotation_error, 1e-7)
            np.testing.assert_allclose(report.transform.matrix, truth.matrix, atol=1e-9)

    def test_noisy_against_brute_force(self):
        truth = random_transform(self.rng)
        demo = self.rng.uniform(-0.1, 0.1, size=(200, 3))
        live = truth.apply(demo) + self.rng.normal(scale=0.001, size=(200, 3))
        report = least_squares_rigid(CorrespondenceSet(demo, live))
        translation_error, rotation_error = transform_error(truth, report.transform)
        self.assertLess(translation_error, 0.001)
        self.assertLess(rotation_error, 0.01)

        oracle, oracle_cost = brute_force_fit(demo, live)
        ours = np.sum((report.transform.apply(demo) - live) ** 2)
        self.assertLessEqual(ours, oracle_cost + 1e-9)
        translation_gap, rotation_gap = transform_error(oracle, report.transform)
        self.assertLess(translation_gap, 1e-4)
        self.assertLess(rotation_gap, 1e-3)

    def test_equivariance(self):
        demo = self.rng.normal(size=(20, 3))
        truth = random_transform(self.rng)
        extra = random_transform(self.rng)
        base = least_squares_rigid(CorrespondenceSet(demo, truth.apply(demo)))
        moved = least_squares_rigid(CorrespondenceSet(demo, extra.apply(truth.apply(demo))))
        np.testing.assert_allclose(moved.transform.matrix, compose(extra, base.transform).matrix, atol=1e-9)

    def test_better_than_identity(self):
        demo = self.rng.normal(size=(30, 3))
        live = random_transform(self.rng).apply(demo) + self.rng.normal(scale=0.05, size=(30, 3))
        report = least_squares_rigid(CorrespondenceSet(demo, live))
        identity_rms = np.sqrt(np.mean(np.sum((demo - live) ** 2, axis=1)))
        self.assertLessEqual(report.rms_residual, identity_rms)

    def test_errors(self):
        points = np.zeros((2, 3))
        with self.assertRaises(TooFewPoints):
            least_squares_rigid(CorrespondenceSet(points, points))
        collinear = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]], dtype=float)
        with self.assertRaises(DegenerateConfiguration):
            least_squares_rigid(CorrespondenceSet(collinear, collinear))
        with self.assertRaises(TooFewPoints):
            least_squares_rigid(CorrespondenceSet(np.eye(3), np.eye(3), np.zeros(3)))


class RansacRigidTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(19)

    def test_noiseless_matches_plain_fit(self):
        truth = random_transform(self.rng)
        demo = self.rng.uniform(-0.1, 0.1, size=(50, 3))
        corrs = CorrespondenceSet(demo, truth.apply(demo))
        report = ransac_rigid(corrs)
        plain = least_squares_rigid(corrs)
        self.assertEqual(report.inlier_count, report.total_count)
        np.testing.assert_allclose(report.transform.matrix, plain.transform.matrix, atol=1e-9)

    def test_outlier_contamination(self):
        truth = random_transform(self.rng)
        demo = self.rng.uniform(-0.1, 0.1, size=(200, 3))
        live = truth.apply(demo) + self.rng.normal(scale=0.0005, size=(200, 3))
        outliers = self.rng.choice(200, size=40, replace=False)
        live[outliers] = self.rng.uniform(-0.5, 0.5, size=(40, 3))
        report = ransac_rigid(CorrespondenceSet(demo, live), threshold_m=0.005, iterations=200, seed=4)
        translation_error, rotation_error = transform_error(truth, report.transform)
        self.assertLess(translation_error, 0.002)
        self.assertLess(rotation_error, 0.02)
        self.assertGreaterEqual(report.inlier_count, 0.75 * report.total_count)

    def test_identical_points(self):
        points = np.ones((10, 3))
        with self.assertRaises(NoConsensus):
            ransac_rigid(CorrespondenceSet(points, points))

    def test_too_few(self):
        with self.assertRaises(TooFewPoints):
            ransac_rigid(CorrespondenceSet(np.zeros((2, 3)), np.zeros((2, 3))))

    def test_seeded_determinism(self):
        demo = self.rng.uniform(-0.1, 0.1, size=(60, 3))
        live = demo + self.rng.normal(scale=0.004, size=(60, 3))
        corrs = CorrespondenceSet(demo, live)
        self.assertEqual(ransac_rigid(corrs, seed=3), ransac_rigid(corrs, seed=3))

    def test_fit_rigid_dispatch(self):
        demo = self.rng.uniform(-0.1, 0.1, size=(20, 3))
        corrs = CorrespondenceSet(demo, demo)
        self.assertEqual(fit_rigid(corrs).inlier_count, 20)
        report = fit_rigid(corrs, Fitter.RANSAC, RansacConfig(threshold_m=0.001, iterations=5, seed=1))
        self.assertEqual(report.inlier_count, 20)
