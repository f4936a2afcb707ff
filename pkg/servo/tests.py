import math
import unittest
from dataclasses import replace

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from core.exceptions import EmptyMask
from core.geometry import Action, Gripper, RigidTransform, magnitude
from core.serializers import render_json
from correspondence.backends import make_backend
from demobank.parts import DemoPart, Keyframe, MemoryBank, Scheme, build_bank
from servo.control import KeyframeFailure, ServoConfig, StepKind, frame_align, sequence_track
from servo.episode import run_episode
from servo.serializers import EpisodeTraceSerializer, ServoConfigSerializer
from simulator.render import render
from simulator.scripted import scripted_demo
from simulator.shapes import Shape
from simulator.world import SceneConfig, TaskKind, make_task, reset


def part_of(*keyframes, part_id='part'):
    return DemoPart(part_id, 'task', 0, keyframes, 'demo')


class ServoTestCase(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings()
        self.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, self.config)
        state = reset(self.task, 3, self.config)
        # target alone, so moving it never slides under the fixture
        self.state = replace(state, objects=(state.target,))
        self.backend = make_backend('oracle', max_flow_px=None)
        self.cfg = ServoConfig.from_settings()

    def keyframe_at(self, state, gripper=Gripper.HOLD):
        return Keyframe.annotate(render(state), Action(gripper=gripper), state.target.id, objects=state.objects)

    def moved_target(self, state, dx=0.0, dy=0.0, yaw=0.0):
        target = state.target
        x, y, z = target.pose.translation
        moved = replace(target, pose=RigidTransform.from_yaw(target.pose.yaw + yaw, (x + dx, y + dy, z)))
        return replace(state, objects=tuple(moved if obj.id == target.id else obj for obj in state.objects))

    def perturbed(self, state, translation=(0.0, 0.0, 0.0), rotvec=(0.0, 0.0, 0.0)):
        return replace(state, ee_pose=state.ee_pose.compose(RigidTransform.from_rotvec(rotvec, translation)))


class ServoConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = ServoConfig.from_settings()
        self.assertEqual(cfg.trans_threshold, 0.01)
        self.assertEqual(cfg.rot_threshold, 0.05)
        self.assertEqual(ServoConfig.from_settings(gain=0.5).gain, 0.5)

    def test_invalid(self):
        for overrides in ({'gain': 0.0}, {'gain': 1.5}, {'trans_threshold': 0.0}, {'max_steps_per_keyframe': 0}):
            with self.assertRaises(ValueError):
                ServoConfig.from_settings(**overrides)

    def test_serializer(self):
        serializer = ServoConfigSerializer(data={'gain': 0.5, 'fitter': 'ransac', 'ransac': {'iterations': 50}})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual((cfg.gain, cfg.fitter, cfg.ransac.iterations), (0.5, 'ransac', 50))
        self.assertEqual(cfg.rot_threshold, settings.SERVO['ROT_THRESHOLD'])
        self.assertFalse(ServoConfigSerializer(data={'gain': 2.0}).is_valid())


class FrameAlignTests(ServoTestCase):
    def test_aligned(self):
        keyframe = self.keyframe_at(self.state)
        action, fit = frame_align(render(self.state), keyframe, self.backend, self.cfg, self.state.objects)
        self.assertEqual(action.gripper, Gripper.HOLD)
        size = magnitude(action.delta)
        self.assertLess(size.translation_norm, 1e-6)
        self.assertLess(size.rotation_angle, 1e-6)
        self.assertLess(fit.rms_residual, 1e-6)

    def test_follows_displaced_object(self):
        keyframe = self.keyframe_at(self.state)
        live_state = self.moved_target(self.state, dx=0.05)
        action, fit = frame_align(render(live_state), keyframe, self.backend, self.cfg, live_state.objects)
        expected = live_state.ee_pose.rotation.T @ np.array([0.05, 0.0, 0.0])
        np.testing.assert_allclose(fit.transform.translation_vector, expected, atol=1e-6)
        world_motion = live_state.ee_pose.rotation @ action.delta.translation_vector
        self.assertGreater(world_motion[0], 0.0199)
        self.assertLess(abs(world_motion[1]), 1e-4)
        self.assertLessEqual(np.linalg.norm(world_motion), self.cfg.max_step_translation)

    def test_gain_scales_unclamped_steps(self):
        keyframe = self.keyframe_at(self.state)
        live_state = self.moved_target(self.state, dy=0.01)
        cfg = ServoConfig.from_settings(gain=0.5)
        action, fit = frame_align(render(live_state), keyframe, self.backend, cfg, live_state.objects)
        self.assertAlmostEqual(magnitude(action.delta).translation_norm,
                               0.5 * magnitude(fit.transform).translation_norm, places=9)

    def test_missing_object(self):
        keyframe = self.keyframe_at(self.state)
        live_state = replace(self.state, objects=())
        with self.assertRaises(EmptyMask):
            frame_align(render(live_state), keyframe, self.backend, self.cfg, live_state.objects)

    def test_empty_keyframe_mask(self):
        keyframe = self.keyframe_at(self.state)
        blank = Keyframe(keyframe.frame, keyframe.action, np.zeros(keyframe.frame.shape, dtype=bool), 9)
        with self.assertRaises(EmptyMask):
            frame_align(render(self.state), blank, self.backend, self.cfg, self.state.objects)

    def test_actions_respect_step_limits(self):
        rng = np.random.default_rng(0)
        keyframe = self.keyframe_at(self.state)
        for _ in range(20):
            live_state = self.perturbed(self.state, rng.uniform(-0.05, 0.05, size=3), (0.0, 0.0, rng.uniform(-0.3, 0.3)))
            action, _ = frame_align(render(live_state), keyframe, self.backend, self.cfg, live_state.objects)
            size = magnitude(action.delta)
            self.assertLessEqual(size.translation_norm, self.cfg.max_step_translation)
            self.assertLessEqual(size.rotation_angle, self.cfg.max_step_rotation)


class SequenceTrackTests(ServoTestCase):
    def test_pre_aligned(self):
        part = part_of(self.keyframe_at(self.state), self.keyframe_at(self.state, Gripper.OPEN))
        state, rows, results = sequence_track(self.state, part, self.backend, self.cfg)
        self.assertEqual([row.kind for row in rows], [StepKind.GRIPPER])
        self.assertEqual(rows[0].gripper, Gripper.OPEN)
        self.assertTrue(all(result.converged and result.steps == 0 for result in results))
        self.assertLess(magnitude(self.state.ee_pose.inverse().compose(state.ee_pose)).translation_norm, 1e-9)

    def test_converges_within_the_step_bound(self):
        part = part_of(self.keyframe_at(self.state))
        bound = math.ceil(0.03 / (self.cfg.gain * self.cfg.max_step_translation)) + 2
        for direction in ((1, 0, 0), (0, 1, 0), (0.6, 0.8, 0)):
            start = self.perturbed(self.state, 0.03 * np.array(direction), (0.0, 0.0, 0.05))
            state, rows, (result,) = sequence_track(start, part, self.backend, self.cfg)
            self.assertTrue(result.converged)
            self.assertLessEqual(result.steps, bound)
            self.assertEqual(len(rows), result.steps)
            error = magnitude(self.state.ee_pose.inverse().compose(state.ee_pose))
            self.assertLess(error.translation_norm, self.cfg.trans_threshold)
            self.assertLess(error.rotation_angle, self.cfg.rot_threshold)

    def test_residual_decays_with_partial_gain(self):
        cfg = ServoConfig.from_settings(gain=0.5, max_steps_per_keyframe=20)
        part = part_of(self.keyframe_at(self.state))
        start = self.perturbed(self.state, (0.04, 0.0, 0.0))
        _, rows, (result,) = sequence_track(start, part, self.backend, cfg)
        self.assertTrue(result.converged)
        norms = [row.residual.translation_norm for row in rows]
        for before, after in zip(norms, norms[1:]):
            self.assertAlmostEqual(after, 0.5 * before, delta=1e-3)

    def test_step_budget(self):
        cfg = ServoConfig.from_settings(max_steps_per_keyframe=1)
        part = part_of(self.keyframe_at(self.state))
        start = self.perturbed(self.state, (0.05, 0.0, 0.0))
        _, rows, (result,) = sequence_track(start, part, self.backend, cfg)
        self.assertFalse(result.converged)
        self.assertEqual(result.failure, KeyframeFailure.MAX_STEPS)
        self.assertEqual(len(rows), 1)

    def test_settling_respects_the_step_budget(self):
        cfg = ServoConfig.from_settings(gain=0.5, max_steps_per_keyframe=1)
        part = part_of(self.keyframe_at(self.state, Gripper.CLOSE))
        # one half-gain step leaves 6 mm: inside the threshold, short of the settle band
        start = self.perturbed(self.state, (0.012, 0.0, 0.0))
        _, rows, (result,) = sequence_track(start, part, self.backend, cfg)
        self.assertFalse(result.converged)
        self.assertEqual(result.failure, KeyframeFailure.MAX_STEPS)
        self.assertEqual(result.steps, 1)
        self.assertEqual([row.kind for row in rows], [StepKind.CORRECTIVE, StepKind.GRIPPER])
        self.assertLess(result.residual.translation_norm, cfg.trans_threshold)

    def test_absent_object_flags_every_keyframe(self):
        part = part_of(self.keyframe_at(self.state), self.keyframe_at(self.state))
        live_state = replace(self.state, objects=())
        state, rows, results = sequence_track(live_state, part, self.backend, self.cfg)
        self.assertEqual(rows, [])
        self.assertEqual([result.failure for result in results], ['empty_mask', 'empty_mask'])
        self.assertEqual(state, live_state)

    def test_settles_before_gripper_commands(self):
        part = part_of(self.keyframe_at(self.state, Gripper.CLOSE))
        start = self.perturbed(self.state, (0.006, 0.0, 0.0))
        state, rows, (result,) = sequence_track(start, part, self.backend, self.cfg)
        self.assertTrue(result.converged)
        self.assertEqual([row.kind for row in rows], [StepKind.CORRECTIVE, StepKind.GRIPPER])
        error = magnitude(self.state.ee_pose.inverse().compose(state.ee_pose))
        self.assertLess(error.translation_norm, 1e-4)


class EpisodeTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = SceneConfig.from_settings()
        cls.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, cls.config)
        cls.demo = scripted_demo(cls.task, 21, cls.config)

    def test_replays_demo_from_its_own_seed(self):
        bank = build_bank([self.demo], Scheme.P3)
        trace = run_episode(self.task, bank, 21)
        self.assertTrue(trace.outcome.success)
        self.assertEqual(trace.executed_parts, [part.part_id for part in bank])
        self.assertEqual(len(trace.plans), 3)
        self.assertEqual(trace.failure, '')
        self.assertEqual(trace.step_count, len(trace.steps))
        self.assertTrue(all(math.isfinite(row.residual.translation_norm) for row in trace.steps))

    def test_empty_bank(self):
        trace = run_episode(self.task, MemoryBank(), 21)
        self.assertEqual(trace.failure, 'empty_bank')
        self.assertFalse(any(vars(trace.outcome).values()))
        self.assertEqual(trace.plans, [])

    def test_deterministic_trace(self):
        bank = build_bank([self.demo], Scheme.P1)
        first = render_json(EpisodeTraceSerializer(run_episode(self.task, bank, 22)).data)
        second = render_json(EpisodeTraceSerializer(run_episode(self.task, bank, 22)).data)
        self.assertEqual(first, second)

    def test_random_walk_executes_whole_path(self):
        bank = build_bank([self.demo], Scheme.P3)
        trace = run_episode(self.task, bank, 21, random_seed=0)
        self.assertEqual(len(trace.plans), 1)
        self.assertEqual(trace.executed_parts, list(trace.plans[0].path))

    @unittest.skipUnless(settings.SLOW_TESTS, 'set DEMOGRAPH_SLOW_TESTS=1 to run servo convergence sweeps')
    def test_convergence_sweep(self):
        backend = make_backend('oracle', max_flow_px=None)
        cfg = ServoConfig.from_settings(max_steps_per_keyframe=20)
        rng = np.random.default_rng(5)
        for seed in range(50):
            state = reset(self.task, 1000 + seed, self.config)
            keyframe = Keyframe.annotate(render(state), Action(), state.target.id, objects=state.objects)
            offset = rng.normal(size=3)
            offset *= rng.uniform(0.0, 0.05) / np.linalg.norm(offset)
            offset[2] = abs(offset[2])
            start = replace(state, ee_pose=state.ee_pose.compose(
                RigidTransform.from_rotvec((0.0, 0.0, rng.uniform(-0.3, 0.3)), offset)))
            _, rows, (result,) = sequence_track(start, part_of(keyframe), backend, cfg)
            self.assertTrue(result.converged, seed)
            bound = math.ceil(max(0.05 / cfg.max_step_translation, 0.3 / cfg.max_step_rotation)) + 2
            self.assertLessEqual(result.steps, bound)
            for row in rows:
                self.assertLessEqual(row.commanded.translation_norm, cfg.max_step_translation)
                self.assertLessEqual(row.commanded.rotation_angle, cfg.max_step_rotation)
