import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from core.camera import CameraIntrinsics, Frame
from core.exceptions import EmptyMask, ZeroVector
from core.geometry import Action, RigidTransform, magnitude
from correspondence.backends import KeypointBackend, OracleConfig, OracleFlowBackend
from correspondence.flow import FlowField
from demobank.parts import Keyframe
from pose.estimation import RansacConfig
from simulator.render import render
from simulator.shapes import Shape
from simulator.world import SceneConfig, SceneObject, TaskKind, make_task, reset
from similarity.embedding import HistogramEmbedder, cosine, embedding_similarity, make_embedder
from similarity.scorer import Scorer, SimilarityConfig
from similarity.scores import (
    Orientation, ScoreKind, SimilarityResult, inlier_similarity, mean_flow, normalize, reprojection_distance,
    sim_fs,
)

SMALL = CameraIntrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)


def small_frame(rgb):
    return Frame(rgb, np.full((8, 8), 0.5), np.zeros((8, 8), dtype=np.int32), SMALL)


def brute_force_scores(demo_rgb, live_rgb, mask, flow, valid):
    """Per-pixel evaluation of the masked reprojection distance and mean flow."""
    distances, lengths = [], []
    for y in range(8):
        for x in range(8):
            if not (mask[y, x] and valid[y, x]):
                continue
            u, v = flow[y, x]
            lengths.append(math.hypot(u, v))
            tx, ty = x + u, y + v
            if not (0 <= tx <= 7 and 0 <= ty <= 7):
                continue
            x0, y0 = min(int(math.floor(tx)), 6), min(int(math.floor(ty)), 6)
            ax, ay = tx - x0, ty - y0
            sample = ((1 - ax) * (1 - ay) * live_rgb[y0, x0] + ax * (1 - ay) * live_rgb[y0, x0 + 1]
                      + (1 - ax) * ay * live_rgb[y0 + 1, x0] + ax * ay * live_rgb[y0 + 1, x0 + 1])
            distances.append(math.sqrt(sum((sample[c] - demo_rgb[y, x, c]) ** 2 for c in range(3))))
    return sum(distances) / len(distances), sum(lengths) / len(lengths)


class FlowScoreTests(SimpleTestCase):
    def test_identity(self):
        frame = small_frame(np.random.default_rng(0).uniform(size=(8, 8, 3)))
        flow = FlowField(np.zeros((8, 8, 2)), np.ones((8, 8), dtype=bool))
        mask = np.ones((8, 8), dtype=bool)
        self.assertEqual(reprojection_distance(frame, frame, mask, flow), 0.0)
        self.assertEqual(mean_flow(mask, flow), 0.0)
        self.assertEqual(sim_fs(frame, frame, mask, flow).raw, 0.0)
        self.assertEqual(sim_fs(frame, frame, mask, flow).normalized, 1.0)

    def test_single_pixel_distance(self):
        demo = np.zeros((8, 8, 3))
        live = np.zeros((8, 8, 3))
        demo[2, 3] = (0.5, 0.5, 0.5)
        live[2, 3] = (0.5, 0.5, 1.0)
        mask = np.zeros((8, 8), dtype=bool)
        mask[2, 3] = True
        flow = FlowField(np.zeros((8, 8, 2)), np.ones((8, 8), dtype=bool))
        self.assertAlmostEqual(reprojection_distance(small_frame(demo), small_frame(live), mask, flow), 0.5)

    def test_two_pixel_mean_flow(self):
        vectors = np.zeros((8, 8, 2))
        vectors[1, 1] = (3.0, 4.0)
        mask = np.zeros((8, 8), dtype=bool)
        mask[1, 1] = mask[5, 5] = True
        self.assertAlmostEqual(mean_flow(mask, FlowField(vectors, np.ones((8, 8), dtype=bool))), 2.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            demo_rgb = rng.uniform(size=(8, 8, 3)).astype(np.float32)
            live_rgb = rng.uniform(size=(8, 8, 3)).astype(np.float32)
            vectors = rng.uniform(-2.0, 2.0, size=(8, 8, 2))
            valid = rng.uniform(size=(8, 8)) < 0.8
            mask = rng.uniform(size=(8, 8)) < 0.6
            mask[3:5, 3:5] = True
            valid[3:5, 3:5] = True
            vectors[3:5, 3:5] = rng.uniform(-0.5, 0.5, size=(2, 2, 2))
            flow = FlowField(vectors, valid)
            expected_rp, expected_mf = brute_force_scores(
                demo_rgb.astype(np.float64), live_rgb.astype(np.float64), mask, flow.flow, valid)
            demo, live = small_frame(demo_rgb), small_frame(live_rgb)
            self.assertAlmostEqual(reprojection_distance(demo, live, mask, flow), expected_rp, delta=1e-9)
            self.assertAlmostEqual(mean_flow(mask, flow), expected_mf, delta=1e-9)

    def test_weighted_sum(self):
        rng = np.random.default_rng(12)
        demo, live = small_frame(rng.uniform(size=(8, 8, 3))), small_frame(rng.uniform(size=(8, 8, 3)))
        flow = FlowField(rng.uniform(-1, 1, size=(8, 8, 2)), np.ones((8, 8), dtype=bool))
        mask = np.ones((8, 8), dtype=bool)
        d_rp, d_mf = reprojection_distance(demo, live, mask, flow), mean_flow(mask, flow)
        self.assertEqual(sim_fs(demo, live, mask, flow, k=0.0).raw, d_rp)
        self.assertAlmostEqual(sim_fs(demo, live, mask, flow).raw, d_rp + 0.5 * d_mf)
        raws = [sim_fs(demo, live, mask, flow, k=k).raw for k in (0.0, 0.25, 0.5, 1.0, 2.0)]
        self.assertEqual(raws, sorted(raws))
        self.assertEqual(SimilarityConfig.from_settings().k, 0.5)

    def test_empty_mask(self):
        frame = small_frame(np.zeros((8, 8, 3)))
        valid = np.zeros((8, 8), dtype=bool)
        with self.assertRaises(EmptyMask):
            mean_flow(np.ones((8, 8), dtype=bool), FlowField(np.zeros((8, 8, 2)), valid))
        with self.assertRaises(EmptyMask):
            reprojection_distance(frame, frame, np.zeros((8, 8), dtype=bool),
                                  FlowField(np.zeros((8, 8, 2)), ~valid))

    def test_valid_pixel_fraction(self):
        frame = small_frame(np.zeros((8, 8, 3)))
        valid = np.zeros((8, 8), dtype=bool)
        valid[:4] = True
        result = sim_fs(frame, frame, np.ones((8, 8), dtype=bool), FlowField(np.zeros((8, 8, 2)), valid))
        self.assertEqual(result.valid_pixel_fraction, 0.5)


class NormalizeTests(SimpleTestCase):
    def test_distance_like(self):
        self.assertEqual(normalize(0.0, ScoreKind.FS, 2.0), 1.0)
        self.assertAlmostEqual(normalize(2.0, ScoreKind.FS, 2.0), math.exp(-1))
        self.assertEqual(normalize(float('inf'), ScoreKind.FS), 1e-12)

    def test_similarity_like(self):
        self.assertEqual(normalize(100.0, ScoreKind.INLIER_COUNT, cap=200.0), 0.5)
        self.assertEqual(normalize(0.0, ScoreKind.INLIER_COUNT, cap=200.0), 1e-12)
        self.assertEqual(normalize(-0.5, ScoreKind.EMBEDDING), 1e-12)
        self.assertEqual(normalize(1.0, ScoreKind.EMBEDDING), 1.0)

    def test_ranking_preserved(self):
        raws = np.random.default_rng(5).uniform(0.01, 10.0, size=100)
        distance = [normalize(r, ScoreKind.FS, 3.0) for r in raws]
        similarity = [normalize(r, ScoreKind.INLIER_COUNT, cap=10.0) for r in raws]
        self.assertEqual(list(np.argsort(raws)), list(np.argsort(distance)[::-1]))
        self.assertEqual(list(np.argsort(raws)), list(np.argsort(similarity)))

    def test_result_bounds(self):
        self.assertEqual(SimilarityResult(1.0, 0.5, 'fs').orientation, Orientation.DISTANCE_LIKE)
        with self.assertRaises(ValueError):
            SimilarityResult(1.0, 0.0, 'fs')
        with self.assertRaises(ValueError):
            normalize(1.0, ScoreKind.FS, temperature=0.0)


class SceneMixin:
    def build_scene(self):
        self.config = SceneConfig.from_settings(shapes=('circle', 'square'))
        self.base = reset(make_task(TaskKind.PICK_AND_PLACE, Shape.CIRCLE, self.config), 0, self.config)

    def scene(self, *objects):
        state = replace(self.base, objects=tuple(objects))
        return state, render(state)

    @staticmethod
    def square(x, y, yaw=0.0):
        return SceneObject(5, Shape.SQUARE, RigidTransform.from_yaw(yaw, (x, y, 0.0)), (0.8, 0.3, 0.8))


class InlierSimilarityTests(SceneMixin, SimpleTestCase):
    def setUp(self):
        self.build_scene()

    def test_self_comparison_keeps_every_match(self):
        state, frame = self.scene(self.square(0.02, 0.01, 0.3))
        mask = np.ones(frame.shape, dtype=bool)
        matches = KeypointBackend().correspond(frame, frame, mask)
        result = inlier_similarity(frame, frame, mask, RansacConfig())
        self.assertEqual(result.raw, len(matches))
        self.assertEqual(result.kind, ScoreKind.INLIER_COUNT)

    def test_blank_live_folds_to_zero(self):
        _, frame = self.scene(self.square(0.02, 0.01))
        blank = Frame(np.full(frame.rgb.shape, 0.5), frame.depth, frame.object_ids, frame.intrinsics)
        result = inlier_similarity(frame, blank, frame.object_ids == 5)
        self.assertEqual(result.raw, 0.0)
        self.assertEqual(result.normalized, 1e-12)

    def test_recovers_object_motion(self):
        demo_state, demo = self.scene(self.square(-0.02, 0.0, 0.2))
        live_state, live = self.scene(self.square(0.03, 0.0, 0.2))
        mask = demo.object_ids == 5
        result = inlier_similarity(demo, live, mask, RansacConfig(), OracleFlowBackend(OracleConfig()),
                                   demo_state.objects, live_state.objects)
        self.assertGreater(result.raw, 0.9 * result.fit.total_count)
        camera = demo.camera_pose
        carry = live_state.objects[0].pose.compose(demo_state.objects[0].pose.inverse())
        truth = camera.inverse().compose(carry).compose(camera)
        error = magnitude(truth.inverse().compose(result.fit.transform))
        self.assertLess(error.translation_norm, 0.002)


class EmbeddingTests(SimpleTestCase):
    def frame(self, color):
        rgb = np.full((48, 64, 3), 0.5)
        rgb[10:20, 10:30] = color
        ids = np.zeros((48, 64), dtype=np.int32)
        ids[10:20, 10:30] = 2
        return Frame(rgb, np.full((48, 64), 0.3), ids, CameraIntrinsics(40.0, 40.0, 32.0, 24.0, 64, 48))

    def test_self_similarity(self):
        frame = self.frame((0.9, 0.1, 0.1))
        self.assertAlmostEqual(embedding_similarity(frame, frame, np.ones((48, 64), dtype=bool)).raw, 1.0)

    def test_colour_mismatch_scores_lower(self):
        red, blue = self.frame((0.9, 0.1, 0.1)), self.frame((0.1, 0.1, 0.9))
        mask = red.object_ids == 2
        same = embedding_similarity(red, red, mask).raw
        different = embedding_similarity(red, blue, mask).raw
        self.assertLess(different, same)

    def test_zero_vector(self):
        frame = self.frame((0.0, 0.0, 0.0))
        with self.assertRaises(ZeroVector):
            embedding_similarity(frame, frame, np.zeros((48, 64), dtype=bool))
        with self.assertRaises(ZeroVector):
            cosine([0.0, 0.0], [1.0, 0.0])

    def test_external_vectors(self):
        frame = self.frame((0.9, 0.1, 0.1))
        result = embedding_similarity(frame, frame, None, demo_vector=[1.0, 0.0], live_vector=[1.0, 1.0])
        self.assertAlmostEqual(result.raw, math.sqrt(0.5))
        self.assertIsInstance(make_embedder('histogram'), HistogramEmbedder)
        with self.assertRaises(ValueError):
            make_embedder('r3m')


class ScorerTests(SceneMixin, SimpleTestCase):
    def setUp(self):
        self.build_scene()

    def keyframe(self, state, frame):
        return Keyframe.annotate(frame, Action(), 5, 'localize', state.objects)

    def test_self_comparison_is_optimal_for_flow_score(self):
        scorer = Scorer(SimilarityConfig(), OracleFlowBackend(OracleConfig()))
        pool = [self.scene(self.square(x, y, yaw)) for x, y, yaw in
                ((0.0, 0.0, 0.0), (0.03, 0.01, 0.2), (-0.04, 0.02, 0.5), (0.01, -0.05, 1.0))]
        for live_state, live in pool:
            scores = [scorer.score(self.keyframe(state, frame), live, live_state.objects).raw for state, frame in pool]
            own = scores[[frame for _, frame in pool].index(live)]
            self.assertEqual(own, 0.0)
            self.assertEqual(min(scores), own)

    def test_embedding_masks_only_the_demo_side(self):
        scorer = Scorer(SimilarityConfig(kind='embedding'), OracleFlowBackend(OracleConfig()))
        state, frame = self.scene(self.square(0.02, 0.0))
        keyframe = self.keyframe(state, frame)
        live_state, live = self.scene(self.square(-0.03, 0.01, 0.4))
        result = scorer.score(keyframe, live, live_state.objects)
        self.assertEqual(result.raw, embedding_similarity(frame, live, keyframe.foreground_mask).raw)
        embedder = HistogramEmbedder()
        cropped = cosine(embedder(frame.rgb, keyframe.foreground_mask), embedder(live.rgb, live.object_ids == 5))
        self.assertNotAlmostEqual(result.raw, cropped, places=3)

    def test_flow_self_match_away_from_home(self):
        scorer = Scorer(SimilarityConfig(), OracleFlowBackend(OracleConfig()))
        state, _ = self.scene(self.square(0.02, 0.01, 0.3))
        state = replace(state, ee_pose=RigidTransform.looking_down(0.7, (0.03, -0.02, 0.31)))
        frame = render(state)
        result = scorer.score(self.keyframe(state, frame), frame, state.objects)
        self.assertEqual(result.raw, 0.0)
        self.assertEqual(result.normalized, 1.0)

    def test_failures_fold_to_worst(self):
        scorer = Scorer(SimilarityConfig(), OracleFlowBackend(OracleConfig()))
        state, frame = self.scene(self.square(0.02, 0.0))
        empty, _ = self.scene()
        with self.assertLogs('similarity.scorer', 'WARNING'):
            result = scorer.score(self.keyframe(state, frame), render(empty), empty.objects)
        self.assertEqual(result.raw, float('inf'))
        self.assertEqual(result.normalized, 1e-12)

    def test_flow_score_needs_dense_backend(self):
        with self.assertRaises(ValueError):
            Scorer(SimilarityConfig(kind='fs'), KeypointBackend())

    def test_coverage_penalty(self):
        scorer = Scorer(SimilarityConfig(coverage_power=1.0), OracleFlowBackend(OracleConfig()))
        self.assertAlmostEqual(scorer.normalize(0.0, valid_pixel_fraction=0.25), 0.25)
        plain = Scorer(SimilarityConfig(), OracleFlowBackend(OracleConfig()))
        self.assertEqual(plain.normalize(0.0, valid_pixel_fraction=0.25), 1.0)

    def test_renormalized(self):
        scorer = Scorer(SimilarityConfig(), OracleFlowBackend(OracleConfig()))
        result = scorer.renormalized(SimilarityResult(2.0, 0.5, 'fs'), 2.0)
        self.assertAlmostEqual(result.normalized, math.exp(-1))
