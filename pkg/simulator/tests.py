import itertools
import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers

from core.camera import project, unproject
from core.exceptions import PlacementFailure, ScriptFailure, WorkspaceViolation
from core.geometry import Action, Gripper, RigidTransform
from core.serializers import load_instance, parse_json, render_json
from demobank.parts import STAGE_ORDER
from simulator.render import camera_rays, render
from simulator.scripted import replay, scripted_demo
from simulator.serializers import SceneConfigSerializer, SceneObjectSerializer, TaskSpecSerializer
from simulator.shapes import FIXTURE_ID, Shape, geometry
from simulator.world import (
    SceneConfig, SceneObject, StageOutcome, TaskKind, ee_pose_for_grasp_point, evaluate_stages,
    make_task, reset, step,
)


class ResetTests(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings(shapes=('trapeze', 'oval', 'circle'))
        self.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, self.config)

    def test_same_seed_identical(self):
        self.assertEqual(reset(self.task, 5, self.config), reset(self.task, 5, self.config))
        self.assertNotEqual(reset(self.task, 5, self.config).objects, reset(self.task, 6, self.config).objects)

    def test_clearance_over_seeds(self):
        for seed in range(100):
            state = reset(self.task, seed, self.config)
            movable = [obj for obj in state.objects if not obj.is_fixture]
            self.assertEqual(len(movable), 3)
            for a, b in itertools.combinations(movable, 2):
                distance = math.dist(a.pose.translation[:2], b.pose.translation[:2])
                self.assertGreaterEqual(distance, self.config.clearance)
                self.assertGreaterEqual(distance, a.geometry.radius + b.geometry.radius + self.config.clearance)
            for obj in movable:
                low, high = self.config.placement_min, self.config.placement_max
                self.assertTrue(low[0] <= obj.pose.translation[0] <= high[0])
                self.assertTrue(low[1] <= obj.pose.translation[1] <= high[1])

    def test_home_pose_and_fixture(self):
        state = reset(self.task, 1, self.config)
        self.assertEqual(state.ee_pose, self.config.home_pose)
        self.assertTrue(state.gripper_open)
        self.assertEqual(state.object_by_id(FIXTURE_ID).shape, Shape.SORTER)
        pad_task = make_task(TaskKind.PICK_AND_PLACE, Shape.OVAL, self.config)
        self.assertEqual(reset(pad_task, 1, self.config).object_by_id(FIXTURE_ID).shape, Shape.PAD)

    def test_workspace_too_small(self):
        cramped = replace(self.config, placement_min=(-0.01, -0.01), placement_max=(0.01, 0.01))
        with self.assertRaises(PlacementFailure):
            reset(self.task, 0, cramped)


class StepTests(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings(grasp_radius=0.010)
        self.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, self.config)
        self.state = reset(self.task, 3, self.config)

    def above_target(self, offset=(0.0, 0.0, 0.0)):
        top = self.state.target.top_center + np.array(offset)
        return replace(self.state, ee_pose=ee_pose_for_grasp_point(top, 0.0, self.config))

    def test_hold_is_a_no_op(self):
        after = step(self.state, Action())
        self.assertEqual(after.objects, self.state.objects)
        self.assertEqual(after.gripper_open, self.state.gripper_open)
        np.testing.assert_allclose(after.ee_pose.matrix, self.state.ee_pose.matrix, atol=1e-15)

    def test_close_within_radius_grasps(self):
        after = step(self.above_target((0.001, 0.0, 0.0)), Action(gripper=Gripper.CLOSE))
        self.assertTrue(after.target.grasped)
        self.assertFalse(after.gripper_open)
        self.assertTrue(after.history.grasped_target)

    def test_close_outside_radius_misses(self):
        after = step(self.above_target((0.02, 0.0, 0.0)), Action(gripper=Gripper.CLOSE))
        self.assertFalse(after.target.grasped)
        self.assertIsNone(after.held)

    def test_grasped_object_moves_rigidly(self):
        state = step(self.above_target(), Action(gripper=Gripper.CLOSE))
        before = np.array(state.target.pose.translation)
        for _ in range(5):
            state = step(state, Action(RigidTransform(translation=(0.02, 0.0, 0.0))))
        np.testing.assert_allclose(np.array(state.target.pose.translation) - before, [0.1, 0.0, 0.0], atol=1e-12)

    def test_steps_are_clamped(self):
        after = step(self.state, Action(RigidTransform(translation=(0.1, 0.0, 0.0))))
        moved = np.linalg.norm(np.subtract(after.ee_pose.translation, self.state.ee_pose.translation))
        self.assertLessEqual(moved, self.config.max_step_translation)
        self.assertGreater(moved, 0.019)

    def test_workspace_violation(self):
        state = replace(self.state, ee_pose=RigidTransform.looking_down(0.0, (0.0, 0.0, 0.151)))
        # looking down, +z in the end-effector frame points at the table
        with self.assertRaises(WorkspaceViolation):
            step(state, Action(RigidTransform(translation=(0.0, 0.0, 0.01))))

    def test_open_releases_flat(self):
        state = step(self.above_target(), Action(gripper=Gripper.CLOSE))
        state = step(state, Action(RigidTransform.from_rotvec((0.0, 0.05, 0.0), (0.0, 0.0, -0.01))))
        state = step(state, Action(gripper=Gripper.OPEN))
        target = state.target
        self.assertFalse(target.grasped)
        self.assertIsNone(state.grasp_offset)
        np.testing.assert_allclose(target.pose.rotation[:, 2], [0.0, 0.0, 1.0], atol=1e-12)
        self.assertEqual(target.pose.translation[2], 0.0)


class RenderTests(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings(shapes=('circle',))
        self.task = make_task(TaskKind.PICK_AND_PLACE, Shape.CIRCLE, self.config)
        self.state = reset(self.task, 2, self.config)

    def test_empty_scene(self):
        frame = render(replace(self.state, objects=()))
        self.assertFalse(frame.object_ids.any())
        np.testing.assert_allclose(frame.depth, self.config.home_position[2], rtol=1e-6)
        self.assertTrue(np.all(frame.rgb >= 0) and np.all(frame.rgb <= 1))

    def test_object_centroid_matches_projection(self):
        circle = self.state.object_by_shape(Shape.CIRCLE)
        frame = render(self.state)
        rows, cols = np.nonzero(frame.object_ids == circle.id)
        self.assertGreater(len(rows), 0)
        expected = project(frame.intrinsics, frame.camera_pose.inverse().apply(circle.top_center))
        self.assertAlmostEqual(cols.mean(), expected[0], delta=1.0)
        self.assertAlmostEqual(rows.mean(), expected[1], delta=1.0)

    def test_nearer_object_wins(self):
        lower = SceneObject(4, Shape.CIRCLE, RigidTransform(translation=(0.0, 0.0, 0.0)), (0, 1, 0))
        upper = SceneObject(5, Shape.SQUARE, RigidTransform.from_yaw(0.3, (0.015, 0.0, 0.04)), (1, 0, 1))
        state = replace(self.state, objects=(lower, upper))
        frame = render(state)
        origin, directions = camera_rays(state.ee_pose, frame.intrinsics)

        def depth_of(obj):
            local = obj.pose.inverse()
            o = local.apply(origin)
            d = directions @ local.rotation.T
            along = (obj.geometry.height - o[2]) / d[..., 2]
            inside = obj.geometry.contains(o[0] + along * d[..., 0], o[1] + along * d[..., 1])
            return np.where(inside & (along > 0), along, np.inf)

        lower_depth, upper_depth = depth_of(lower), depth_of(upper)
        contested = np.isfinite(lower_depth) & np.isfinite(upper_depth)
        self.assertTrue(contested.any())
        expected = np.where(upper_depth < lower_depth, upper.id, lower.id)
        np.testing.assert_array_equal(frame.object_ids[contested], expected[contested])

    def test_labelled_pixels_lie_on_their_object(self):
        state = reset(make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, SceneConfig.from_settings()), 4,
                      SceneConfig.from_settings())
        frame = render(state)
        for obj in state.objects:
            rows, cols = np.nonzero(frame.object_ids == obj.id)
            for row, col in zip(rows, cols):
                world = frame.camera_pose.apply(unproject(frame, (col, row)))
                local = obj.pose.inverse().apply(world)
                self.assertAlmostEqual(local[2], obj.geometry.height, delta=1e-6)
                # depth is stored as float32, so boundary pixels may land a hair outside the footprint
                self.assertLessEqual(math.hypot(local[0], local[1]), obj.geometry.radius + 1e-6)

    def test_side_walls_are_not_drawn(self):
        circle = SceneObject(4, Shape.CIRCLE, RigidTransform(translation=(0.08, 0.0, 0.0)), (0, 1, 0))
        state = replace(self.state, objects=(circle,))
        camera = RigidTransform.looking_down(0.0, (0.0, 0.0, 0.1))
        frame = render(state, camera=camera)
        height = circle.geometry.height
        # the wall facing the camera, halfway up
        wall = np.array([0.08 - circle.geometry.radius, 0.0, height / 2])
        col, row = np.rint(project(frame.intrinsics, camera.inverse().apply(wall))).astype(int)
        self.assertEqual(frame.object_ids[row, col], 0)
        self.assertAlmostEqual(float(frame.depth[row, col]), 0.1, delta=1e-6)
        labelled = frame.object_ids == circle.id
        self.assertTrue(labelled.any())
        np.testing.assert_allclose(frame.depth[labelled], 0.1 - height, atol=1e-6)

    def test_brightness_perturbation(self):
        base = render(self.state)
        brighter = render(self.state, brightness=0.1)
        np.testing.assert_array_equal(base.depth, brighter.depth)
        self.assertGreater(brighter.rgb.mean(), base.rgb.mean())

    def test_deterministic(self):
        self.assertEqual(render(self.state), render(self.state))


class ScriptedDemoTests(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings()
        self.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, self.config)
        self.trajectory = scripted_demo(self.task, 12, self.config)

    def test_final_state_succeeds(self):
        self.assertEqual(evaluate_stages(self.trajectory.final_state), StageOutcome(True, True, True, True))

    def test_replay_reaches_success(self):
        state = replay(self.trajectory)
        self.assertEqual(state, self.trajectory.final_state)
        self.assertTrue(evaluate_stages(state).success)

    def test_same_seed_same_trajectory(self):
        again = scripted_demo(self.task, 12, self.config)
        self.assertEqual(again.keyframes, self.trajectory.keyframes)
        self.assertEqual(again.step_actions, self.trajectory.step_actions)

    def test_stage_labels_and_masks(self):
        labels = [keyframe.stage for keyframe in self.trajectory.keyframes]
        self.assertEqual(sorted(set(labels), key=STAGE_ORDER.index), list(STAGE_ORDER))
        self.assertEqual([STAGE_ORDER.index(label) for label in labels],
                         sorted(STAGE_ORDER.index(label) for label in labels))
        for keyframe in self.trajectory.keyframes:
            np.testing.assert_array_equal(keyframe.foreground_mask,
                                          keyframe.frame.object_ids == keyframe.foreground_object_id)
        self.assertTrue(self.trajectory.keyframes[0].foreground_mask.any())
        self.assertTrue(self.trajectory.keyframes[-1].foreground_mask.any())
        grippers = [keyframe.action.gripper for keyframe in self.trajectory.keyframes]
        self.assertEqual(grippers.count(Gripper.CLOSE), 1)
        self.assertEqual(grippers.count(Gripper.OPEN), 1)

    def test_pick_and_place(self):
        task = make_task(TaskKind.PICK_AND_PLACE, Shape.OVAL, self.config)
        trajectory = scripted_demo(task, 3, self.config)
        self.assertTrue(evaluate_stages(trajectory.final_state).success)

    def test_missing_target(self):
        config = SceneConfig.from_settings(shapes=('oval',))
        with self.assertRaises(ScriptFailure):
            scripted_demo(make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, config), 0, config)


class EvaluateStagesTests(SimpleTestCase):
    def setUp(self):
        self.config = SceneConfig.from_settings()
        self.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, self.config)

    def test_untouched_scene(self):
        self.assertEqual(evaluate_stages(reset(self.task, 0, self.config)), StageOutcome())

    def test_rotated_at_goal(self):
        final = scripted_demo(self.task, 8, self.config).final_state
        target = final.target
        rotated = replace(target, pose=RigidTransform.from_yaw(target.pose.yaw + 0.5, target.pose.translation))
        state = replace(final, objects=tuple(rotated if obj is target else obj for obj in final.objects))
        outcome = evaluate_stages(state)
        self.assertTrue(outcome.correct_grasp)
        self.assertFalse(outcome.correct_orientation)
        self.assertFalse(outcome.success)

    def test_symmetric_shapes_ignore_equivalent_yaw(self):
        task = make_task(TaskKind.SHAPE_SORTING, Shape.OVAL, self.config)
        final = scripted_demo(task, 8, self.config).final_state
        target = final.target
        flipped = replace(target, pose=RigidTransform.from_yaw(target.pose.yaw + math.pi, target.pose.translation))
        state = replace(final, objects=tuple(flipped if obj is target else obj for obj in final.objects))
        self.assertTrue(evaluate_stages(state).success)


class SerializerTests(SimpleTestCase):
    def test_scene_config_overrides(self):
        payload = parse_json('{"shapes": ["circle", "square"], "grasp_radius": 0.01, "lift_height": 0.38}')
        config = load_instance(SceneConfigSerializer, payload)
        self.assertEqual(config.shapes, (Shape.CIRCLE, Shape.SQUARE))
        self.assertEqual(config.grasp_radius, 0.01)
        self.assertEqual(config.home_position, SceneConfig.from_settings().home_position)

    def test_scene_config_round_trip(self):
        config = SceneConfig.from_settings()
        payload = parse_json(render_json(SceneConfigSerializer(config).data))
        self.assertEqual(load_instance(SceneConfigSerializer, payload), config)

    def test_scene_config_rejects_bad_values(self):
        with self.assertRaises(serializers.ValidationError):
            load_instance(SceneConfigSerializer, {'shapes': ['sorter']})
        with self.assertRaises(serializers.ValidationError):
            load_instance(SceneConfigSerializer, {'workspace_min': [0, 0, 0], 'workspace_max': [0, 1, 1]})

    def test_object_and_task_round_trip(self):
        config = SceneConfig.from_settings()
        task = make_task(TaskKind.PICK_AND_PLACE, Shape.OVAL, config)
        state = reset(task, 9, config)
        for obj in state.objects:
            payload = parse_json(render_json(SceneObjectSerializer(obj).data))
            self.assertEqual(load_instance(SceneObjectSerializer, payload), obj)
        payload = parse_json(render_json(TaskSpecSerializer(task).data))
        self.assertEqual(load_instance(TaskSpecSerializer, payload), task)

    def test_geometry_lookup(self):
        self.assertEqual(geometry('oval').object_id, 3)
        self.assertIsNone(geometry(Shape.CIRCLE).symmetry)
