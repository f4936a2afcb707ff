from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from scipy import ndimage

from core.camera import CameraIntrinsics, Frame
from core.exceptions import NoKeypoints, StateMismatch
from core.geometry import RigidTransform
from correspondence.backends import (
    KeypointBackend, OracleConfig, OracleFlowBackend, PatchMatchBackend, lift, make_backend,
)
from correspondence.flow import FlowField, bilinear_sample, oracle_flow, patch_match_flow, warp
from correspondence.keypoints import KeypointMatches, match_keypoints
from pose.estimation import CorrespondenceSet
from simulator.render import render
from simulator.shapes import Shape
from simulator.world import SceneConfig, SceneObject, TaskKind, make_task, reset

INTRINSICS = CameraIntrinsics(40.0, 40.0, 32.0, 24.0, 64, 48)


def make_frame(rgb, depth=0.3, object_ids=None):
    shape = rgb.shape[:2]
    ids = np.zeros(shape, dtype=np.int32) if object_ids is None else object_ids
    return Frame(rgb, np.full(shape, depth), ids, INTRINSICS)


def smooth_texture(seed, shape=(48, 64)):
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 1.0, size=shape + (3,))
    return ndimage.gaussian_filter(noise, sigma=(1.0, 1.0, 0.0))


class SceneMixin:
    def build_scene(self):
        self.config = SceneConfig.from_settings(shapes=('circle', 'square'))
        self.base = reset(make_task(TaskKind.PICK_AND_PLACE, Shape.CIRCLE, self.config), 0, self.config)

    def scene(self, *objects):
        state = replace(self.base, objects=tuple(objects))
        return state, render(state)

    @staticmethod
    def circle(x, y, z=0.0, yaw=0.0):
        return SceneObject(4, Shape.CIRCLE, RigidTransform.from_yaw(yaw, (x, y, z)), (0.3, 0.8, 0.3))

    @staticmethod
    def square(x, y, z=0.0, yaw=0.0):
        return SceneObject(5, Shape.SQUARE, RigidTransform.from_yaw(yaw, (x, y, z)), (0.8, 0.3, 0.8))


class OracleFlowTests(SceneMixin, SimpleTestCase):
    def setUp(self):
        self.build_scene()

    def test_identical_scenes_give_zero_flow(self):
        state, frame = self.scene(self.circle(0.03, 0.02), self.square(-0.05, 0.0, yaw=0.4))
        field = oracle_flow(frame, frame, state, state)
        self.assertFalse(np.any(field.flow))
        self.assertTrue(field.valid[frame.depth > 0].all())

    def test_rims_keep_their_flow(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.0), self.square(0.045, 0.0))
        live_state, live = self.scene(self.circle(-0.004, 0.0), self.square(0.045, 0.0))
        field = oracle_flow(demo, live, demo_state, live_state)
        square = demo.object_ids == 5
        rim = square & ~ndimage.binary_erosion(square)
        self.assertTrue(rim.any())
        self.assertTrue(field.valid[rim].all())

    def test_translation_along_camera_x(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.02))
        live_state, live = self.scene(self.circle(0.01, 0.02))
        field = oracle_flow(demo, live, demo_state, live_state)
        masked = demo.object_ids == 4
        selected = masked & field.valid
        self.assertGreaterEqual(selected.sum(), 3)
        # the camera looks straight down, so camera x is world x; top face at 0.35 - 0.025
        expected = 40.0 * 0.01 / 0.325
        np.testing.assert_allclose(field.flow[selected, 0], expected, atol=0.5)
        np.testing.assert_allclose(field.flow[selected, 1], 0.0, atol=0.5)

    def test_occlusion_reduces_valid_fraction(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.02))
        clear_state, clear = self.scene(self.circle(0.0, 0.02), self.square(0.06, 0.02))
        blocked_state, blocked = self.scene(self.circle(0.0, 0.02), self.square(0.015, 0.02, z=0.03))
        masked = demo.object_ids == 4
        clear_fraction = oracle_flow(demo, clear, demo_state, clear_state).valid[masked].mean()
        blocked_fraction = oracle_flow(demo, blocked, demo_state, blocked_state).valid[masked].mean()
        self.assertGreater(clear_fraction, 0.0)
        self.assertLess(blocked_fraction, clear_fraction)

    def test_warp_reproduces_flat_objects(self):
        demo_state, demo = self.scene(self.circle(-0.02, 0.0), self.square(0.05, -0.03, yaw=0.2))
        live_state, live = self.scene(self.circle(0.0, 0.01, yaw=0.7), self.square(0.04, -0.02, yaw=0.5))
        field = oracle_flow(demo, live, demo_state, live_state)
        warped, defined = warp(live, field)
        # bilinear sampling blends colours across object borders, so compare object interiors only
        xs, ys = np.meshgrid(np.arange(64), np.arange(48))
        x0 = np.minimum(np.floor(np.clip(xs + field.flow[..., 0], 0, 63)).astype(int), 62)
        y0 = np.minimum(np.floor(np.clip(ys + field.flow[..., 1], 0, 47)).astype(int), 46)
        interior = np.ones(demo.shape, dtype=bool)
        for dy in (0, 1):
            for dx in (0, 1):
                interior &= live.object_ids[y0 + dy, x0 + dx] == demo.object_ids
        selected = defined & interior & (demo.object_ids > 0)
        self.assertTrue(selected.any())
        np.testing.assert_allclose(warped[selected], demo.rgb[selected], atol=1e-6)

    def test_state_mismatch(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.0))
        other_state, _ = self.scene(self.circle(0.01, 0.0))
        with self.assertRaises(StateMismatch):
            oracle_flow(demo, demo, other_state, demo_state)

    def test_capture_range(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.02))
        live_state, live = self.scene(self.circle(0.1, 0.02))
        masked = demo.object_ids == 4
        broken = oracle_flow(demo, live, demo_state, live_state, max_flow_px=5.0, mask=masked)
        self.assertFalse(broken.valid.any())
        limited = oracle_flow(demo, live, demo_state, live_state, max_flow_px=5.0)
        self.assertTrue(limited.valid[masked].any())
        self.assertLessEqual(limited.magnitude.max(), 5.0 + 1e-9)

    def test_seeded_noise(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.02))
        first = oracle_flow(demo, demo, demo_state, demo_state, noise_px=1.0, seed=3)
        again = oracle_flow(demo, demo, demo_state, demo_state, noise_px=1.0, seed=3)
        other = oracle_flow(demo, demo, demo_state, demo_state, noise_px=1.0, seed=4)
        self.assertEqual(first, again)
        self.assertNotEqual(first, other)
        self.assertAlmostEqual(first.flow[first.valid].std(), 1.0, delta=0.1)

    def test_backend_passes_snapshots(self):
        demo_state, demo = self.scene(self.circle(0.0, 0.02))
        live_state, live = self.scene(self.circle(0.01, 0.02))
        backend = OracleFlowBackend(OracleConfig())
        mask = demo.object_ids == 4
        self.assertEqual(backend.correspond(demo, live, mask, demo_state.objects, live_state.objects),
                         oracle_flow(demo, live, demo_state, live_state, mask=mask))


class PatchMatchTests(SimpleTestCase):
    def setUp(self):
        self.rgb = np.random.default_rng(1).uniform(0.0, 1.0, size=(48, 64, 3))
        self.demo = make_frame(self.rgb)

    def test_self_match(self):
        field = patch_match_flow(self.demo, self.demo, np.ones((48, 64), dtype=bool), patch=2, search=3)
        self.assertFalse(np.any(field.flow))
        self.assertTrue(field.valid[2:-2, 2:-2].all())

    def test_integer_shift(self):
        shifted = np.random.default_rng(2).uniform(0.0, 1.0, size=self.rgb.shape)
        shifted[:, 3:] = self.rgb[:, :-3]
        live = make_frame(shifted)
        field = patch_match_flow(self.demo, live, np.ones((48, 64), dtype=bool), patch=2, search=4)
        np.testing.assert_array_equal(field.flow[field.valid], np.tile([3.0, 0.0], (field.valid.sum(), 1)))
        self.assertTrue(field.valid[2:-2, 2:-7].all())

    def test_uniform_region_is_ambiguous(self):
        rgb = self.rgb.copy()
        rgb[10:40, 10:50] = 0.5
        frame = make_frame(rgb)
        mask = np.zeros((48, 64), dtype=bool)
        mask[20:30, 20:40] = True
        field = patch_match_flow(frame, frame, mask, patch=2, search=3)
        self.assertFalse(field.valid.any())

    def test_rejects_bad_parameters(self):
        with self.assertRaises(ValueError):
            patch_match_flow(self.demo, self.demo, np.ones((48, 64), dtype=bool), patch=0)


class KeypointTests(SimpleTestCase):
    def setUp(self):
        self.base = smooth_texture(5, (80, 100))

    def test_self_match(self):
        frame = make_frame(self.base[10:58, 10:74])
        matches = match_keypoints(frame, frame, np.ones((48, 64), dtype=bool))
        self.assertGreaterEqual(len(matches), 3)
        np.testing.assert_array_equal(matches.demo_pixels, matches.live_pixels)
        np.testing.assert_allclose(matches.scores, 1.0, atol=1e-9)

    def test_translated_image(self):
        demo = make_frame(self.base[10:58, 10:74])
        # live[y + 2, x + 5] == demo[y, x]
        live = make_frame(self.base[8:56, 5:69])
        matches = match_keypoints(demo, live, np.ones((48, 64), dtype=bool), min_score=0.99)
        self.assertGreaterEqual(len(matches), 3)
        np.testing.assert_array_equal(matches.live_pixels - matches.demo_pixels,
                                      np.tile([5.0, 2.0], (len(matches), 1)))

    def test_mask_restricts_demo_side(self):
        frame = make_frame(self.base[10:58, 10:74])
        mask = np.zeros((48, 64), dtype=bool)
        mask[:, :32] = True
        matches = match_keypoints(frame, frame, mask)
        self.assertTrue(np.all(matches.demo_pixels[:, 0] < 32))

    def test_blank_images(self):
        blank = make_frame(np.full((48, 64, 3), 0.4))
        with self.assertRaises(NoKeypoints):
            match_keypoints(blank, blank, np.ones((48, 64), dtype=bool))

    def test_pairs_and_scores(self):
        matches = KeypointMatches([[1, 2]], [[3, 4]], [0.5])
        self.assertEqual(matches.pairs, [((1.0, 2.0), (3.0, 4.0), 0.5)])
        with self.assertRaises(ValueError):
            KeypointMatches([[1, 2]], [[3, 4]], [1.5])

    def test_lift_matches(self):
        frame = make_frame(self.base[10:58, 10:74])
        backend = KeypointBackend()
        matches = backend.correspond(frame, frame, np.ones((48, 64), dtype=bool))
        corrs = lift(frame, frame, None, matches)
        self.assertIsInstance(corrs, CorrespondenceSet)
        np.testing.assert_allclose(corrs.demo_points, corrs.live_points)


class WarpTests(SimpleTestCase):
    def setUp(self):
        self.live = make_frame(np.random.default_rng(3).uniform(0.0, 1.0, size=(48, 64, 3)))

    def test_zero_flow(self):
        warped, defined = warp(self.live, FlowField(np.zeros((48, 64, 2)), np.ones((48, 64), dtype=bool)))
        self.assertTrue(defined.all())
        np.testing.assert_allclose(warped, self.live.rgb, atol=1e-7)

    def test_integer_shift(self):
        flow = np.zeros((48, 64, 2))
        flow[..., 0] = 1.0
        warped, defined = warp(self.live, FlowField(flow, np.ones((48, 64), dtype=bool)))
        self.assertFalse(defined[:, -1].any())
        np.testing.assert_allclose(warped[:, :-1], self.live.rgb[:, 1:], atol=1e-7)

    def test_subpixel_flow_matches_direct_interpolation(self):
        rng = np.random.default_rng(4)
        flow = rng.uniform(-3.0, 3.0, size=(48, 64, 2))
        warped, defined = warp(self.live, FlowField(flow, np.ones((48, 64), dtype=bool)))
        rgb = self.live.rgb.astype(np.float64)
        for y, x in zip(*np.nonzero(defined)):
            tx, ty = x + flow[y, x, 0], y + flow[y, x, 1]
            x0, y0 = int(np.floor(tx)), int(np.floor(ty))
            x1, y1 = min(x0 + 1, 63), min(y0 + 1, 47)
            ax, ay = tx - x0, ty - y0
            expected = ((1 - ax) * (1 - ay) * rgb[y0, x0] + ax * (1 - ay) * rgb[y0, x1]
                        + (1 - ax) * ay * rgb[y1, x0] + ax * ay * rgb[y1, x1])
            np.testing.assert_allclose(warped[y, x], expected, atol=1e-6)

    def test_invalid_flow_is_excluded(self):
        valid = np.ones((48, 64), dtype=bool)
        valid[5, 5] = False
        _, defined = warp(self.live, FlowField(np.zeros((48, 64, 2)), valid))
        self.assertFalse(defined[5, 5])
        self.assertEqual(bilinear_sample(self.live.rgb, 2.0, 3.0).tolist(),
                         self.live.rgb[3, 2].astype(np.float64).tolist())


class MakeBackendTests(SimpleTestCase):
    def test_backends_by_name(self):
        self.assertIsInstance(make_backend('oracle'), OracleFlowBackend)
        self.assertIsInstance(make_backend('patch_match', patch=1), PatchMatchBackend)
        self.assertIsInstance(make_backend('keypoints'), KeypointBackend)
        self.assertEqual(make_backend('oracle', noise_px=1.0).config.noise_px, 1.0)
        self.assertEqual(make_backend('patch_match', patch=1).patch, 1)
        self.assertIsNone(make_backend('oracle').config.max_flow_px)
        with self.assertRaises(ValueError):
            make_backend('lucas_kanade')
