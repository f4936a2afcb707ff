"""
Scripted demonstrator.

Drives the end-effector through a fixed list of waypoints with clamped steps and records a
keyframe at every waypoint plus whenever the camera has moved far enough since the previous one.
"""
import logging
import math
from dataclasses import dataclass

from core.exceptions import ScriptFailure, WorkspaceViolation
from core.geometry import Action, Gripper, RigidTransform, clamp_delta, magnitude
from demobank.parts import Keyframe, Stage
from simulator.render import render
from simulator.shapes import FIXTURE_ID
from simulator.world import (
    SceneConfig, TaskKind, ee_pose_for_grasp_point, reset, step, within_workspace,
)

logger = logging.getLogger(__name__)

TABLE_ID = 0
MAX_SEGMENT_STEPS = 400
ARRIVED_TRANSLATION = 1e-9
# arccos cannot resolve angles much below 1e-8
ARRIVED_ROTATION = 1e-6


@dataclass(frozen=True)
class Trajectory:
    keyframes: tuple
    step_actions: tuple
    task: object
    seed: int
    final_state: object = None


@dataclass(frozen=True)
class Waypoint:
    pose: RigidTransform
    stage: str
    gripper: str = Gripper.HOLD


def hover_pose(target, yaw, config):
    """End-effector pose at home height with its grasp point straight above the top of ``target``."""
    top = target.top_center
    return ee_pose_for_grasp_point((top[0], top[1], config.home_position[2] - config.grasp_offset[2]), yaw, config)


class ScriptedDemonstrator:
    def __init__(self, task, seed, config=None):
        self.config = config or SceneConfig.from_settings()
        self.task = task
        self.seed = seed
        self.state = reset(task, seed, self.config)
        self.step_actions = []
        # (state, stage, gripper command) per recorded keyframe; actions are filled in afterwards
        self.recorded = []

    def foreground_id(self, state, frame):
        """The target unless it is held; while held, the fixture (or the table when the fixture is out of view)."""
        target = state.target
        if not target.grasped:
            return target.id
        if (frame.object_ids == FIXTURE_ID).sum() >= self.config.min_foreground_pixels:
            return FIXTURE_ID
        return TABLE_ID

    def record(self, stage, gripper=Gripper.HOLD):
        self.recorded.append((self.state, Stage(stage), Gripper(gripper)))

    def moved_since_keyframe(self):
        size = magnitude(self.recorded[-1][0].ee_pose.inverse().compose(self.state.ee_pose))
        return size.translation_norm >= self.config.keyframe_translation or \
            size.rotation_angle >= self.config.keyframe_rotation

    def arrived(self, waypoint):
        size = magnitude(self.state.ee_pose.inverse().compose(waypoint.pose))
        return size.translation_norm < ARRIVED_TRANSLATION and size.rotation_angle < ARRIVED_ROTATION

    def apply(self, action):
        try:
            self.state = step(self.state, action)
        except WorkspaceViolation as exc:
            raise ScriptFailure(f'Scripted motion left the workspace: {exc}') from exc
        self.step_actions.append(action)

    def move_to(self, waypoint):
        if not within_workspace(waypoint.pose, self.config):
            raise ScriptFailure(f'{waypoint.stage} waypoint {waypoint.pose.translation} is unreachable.')
        for _ in range(MAX_SEGMENT_STEPS):
            if self.arrived(waypoint):
                break
            delta = self.state.ee_pose.inverse().compose(waypoint.pose)
            self.apply(Action(clamp_delta(delta, self.config.max_step_translation, self.config.max_step_rotation)))
            if not self.arrived(waypoint) and self.moved_since_keyframe():
                self.record(waypoint.stage)
        else:
            raise ScriptFailure(f'{waypoint.stage} waypoint not reached in {MAX_SEGMENT_STEPS} steps.')

        if self.recorded[-1][0] is not self.state:
            self.record(waypoint.stage, waypoint.gripper)
        elif waypoint.gripper != Gripper.HOLD:
            state, stage, _ = self.recorded[-1]
            self.recorded[-1] = (state, stage, Gripper(waypoint.gripper))
        if waypoint.gripper != Gripper.HOLD:
            self.apply(Action(gripper=waypoint.gripper))

    def grasp_yaw(self, target, current_yaw):
        period = target.geometry.symmetry
        if period is None:
            return current_yaw
        return current_yaw + math.remainder(target.pose.yaw - current_yaw, period)

    def run(self):
        config, task = self.config, self.task
        target = self.state.target
        if target is None:
            raise ScriptFailure(f'No {task.target_shape.value} in the scene.')
        home_yaw = self.state.ee_pose.yaw
        self.record(Stage.LOCALIZE)

        top = target.top_center
        grasp_yaw = self.grasp_yaw(target, home_yaw)
        self.move_to(Waypoint(hover_pose(target, home_yaw, config), Stage.LOCALIZE))
        self.move_to(Waypoint(hover_pose(target, grasp_yaw, config), Stage.REORIENT))
        self.move_to(Waypoint(ee_pose_for_grasp_point(top, grasp_yaw, config), Stage.REORIENT, Gripper.CLOSE))
        if not self.state.target.grasped:
            raise ScriptFailure('Grasp missed the target.')

        self.move_to(Waypoint(self.lifted(self.state.ee_pose), Stage.PLACE))

        goal = task.goal_pose
        held = self.state.target
        offset = self.state.grasp_offset
        held_yaw = held.pose.yaw
        if task.kind == TaskKind.SHAPE_SORTING:
            period = held.geometry.symmetry
            place_yaw = held_yaw if period is None else held_yaw + math.remainder(goal.yaw - held_yaw, period)
        else:
            place_yaw = held_yaw
        rest = self.fixture_height()

        def carrying(yaw, base_height):
            gx, gy, _ = goal.translation
            return RigidTransform.from_yaw(yaw, (gx, gy, base_height)).compose(offset.inverse())

        self.move_to(Waypoint(self.lifted(carrying(held_yaw, rest)), Stage.PLACE))
        self.move_to(Waypoint(self.lifted(carrying(place_yaw, rest)), Stage.PLACE))
        self.move_to(Waypoint(carrying(place_yaw, rest), Stage.PLACE, Gripper.OPEN))
        self.move_to(Waypoint(self.lifted(self.state.ee_pose), Stage.PLACE))
        return self.trajectory()

    def lifted(self, pose):
        x, y, _ = pose.translation
        return RigidTransform(pose.quaternion, (x, y, self.config.lift_height))

    def fixture_height(self):
        fixture = self.state.object_by_id(FIXTURE_ID)
        return fixture.geometry.height if fixture is not None else 0.0

    def trajectory(self):
        keyframes = []
        for index, (state, stage, gripper) in enumerate(self.recorded):
            if index + 1 < len(self.recorded):
                delta = state.ee_pose.inverse().compose(self.recorded[index + 1][0].ee_pose)
            else:
                delta = RigidTransform.identity()
            frame = render(state)
            keyframes.append(Keyframe.annotate(
                frame, Action(delta, gripper), self.foreground_id(state, frame), stage, state.objects,
            ))
        logger.debug('scripted %s demo (seed %s): %d keyframes, %d steps',
                     self.task.target_shape.value, self.seed, len(keyframes), len(self.step_actions))
        return Trajectory(tuple(keyframes), tuple(self.step_actions), self.task, self.seed, self.state)


def scripted_demo(task, seed, config=None):
    return ScriptedDemonstrator(task, seed, config).run()


def replay(trajectory, config=None):
    """Re-run every recorded step action from the trajectory's reset state."""
    state = reset(trajectory.task, trajectory.seed, config or trajectory.final_state.config)
    for action in trajectory.step_actions:
        state = step(state, action)
    return state
