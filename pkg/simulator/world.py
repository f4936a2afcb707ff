"""
Kinematic tabletop world.

The world is an immutable ``WorldState`` value; ``reset`` builds one from a seed and ``step``
returns the successor under an ``Action``. There is no dynamics integration: a closed gripper
near an object's grasp point carries the object rigidly, and an opened gripper leaves it lying
flat where it was released.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from django.db import models

from core.camera import CameraIntrinsics
from core.exceptions import PlacementFailure, WorkspaceViolation
from core.geometry import Gripper, RigidTransform, clamp_delta, symmetric_yaw_error
from simulator.shapes import FIXTURE_ID, SORTER_SLOTS, Shape, geometry

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000


class TaskKind(models.TextChoices):
    SHAPE_SORTING = 'shape_sorting', 'Shape sorting'
    PICK_AND_PLACE = 'pick_and_place', 'Pick and place'


@dataclass(frozen=True)
class SceneConfig:
    intrinsics: CameraIntrinsics
    home_position: tuple = (0.0, 0.0, 0.35)
    home_yaw: float = 0.0
    workspace_min: tuple = (-0.30, -0.30, 0.15)
    workspace_max: tuple = (0.30, 0.30, 0.45)
    placement_min: tuple = (-0.13, -0.13)
    placement_max: tuple = (0.13, 0.13)
    clearance: float = 0.01
    max_step_translation: float = 0.02
    max_step_rotation: float = 0.1
    grasp_radius: float = 0.015
    grasp_offset: tuple = (0.0, 0.05, 0.15)
    lift_height: float = 0.40
    fixture_position: tuple = (0.0, 0.0)
    shapes: tuple = (Shape.TRAPEZE, Shape.OVAL)
    position_tolerance: float = 0.015
    orientation_tolerance: float = 0.1
    pad_tolerance: float = 0.04
    texture_seed: int = 7
    texture_cell: float = 0.01
    keyframe_translation: float = 0.04
    keyframe_rotation: float = 0.3
    min_foreground_pixels: int = 12

    def __post_init__(self):
        object.__setattr__(self, 'shapes', tuple(Shape(s) for s in self.shapes))
        if any(s not in SORTER_SLOTS for s in self.shapes):
            raise ValueError('scene shapes must be graspable shapes')
        if len(set(self.shapes)) != len(self.shapes):
            raise ValueError('scene shapes must be distinct')
        if min(self.position_tolerance, self.orientation_tolerance, self.pad_tolerance) <= 0:
            raise ValueError('tolerances must be positive')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        sim = settings.SIMULATOR
        values = {
            'intrinsics': CameraIntrinsics.from_settings(),
            'home_position': tuple(sim['HOME_POSITION']),
            'workspace_min': tuple(sim['WORKSPACE_MIN']),
            'workspace_max': tuple(sim['WORKSPACE_MAX']),
            'placement_min': tuple(sim['PLACEMENT_MIN']),
            'placement_max': tuple(sim['PLACEMENT_MAX']),
            'clearance': sim['CLEARANCE'],
            'max_step_translation': sim['MAX_STEP_TRANSLATION'],
            'max_step_rotation': sim['MAX_STEP_ROTATION'],
            'grasp_radius': sim['GRASP_RADIUS'],
            'grasp_offset': tuple(sim['GRASP_OFFSET']),
            'lift_height': sim['LIFT_HEIGHT'],
            'fixture_position': tuple(sim['FIXTURE_POSITION']),
            'shapes': tuple(sim['SHAPES']),
            'position_tolerance': sim['POSITION_TOLERANCE'],
            'orientation_tolerance': sim['ORIENTATION_TOLERANCE'],
            'pad_tolerance': sim['PAD_TOLERANCE'],
            'texture_seed': sim['TEXTURE_SEED'],
            'texture_cell': sim['TEXTURE_CELL'],
            'keyframe_translation': sim['KEYFRAME_TRANSLATION'],
            'keyframe_rotation': sim['KEYFRAME_ROTATION'],
            'min_foreground_pixels': sim['MIN_FOREGROUND_PIXELS'],
        }
        values.update(overrides)
        return cls(**values)

    @property
    def home_pose(self):
        return RigidTransform.looking_down(self.home_yaw, self.home_position)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    target_shape: str
    goal_pose: RigidTransform
    position_tolerance: float
    orientation_tolerance: float

    def __post_init__(self):
        object.__setattr__(self, 'kind', TaskKind(self.kind))
        object.__setattr__(self, 'target_shape', Shape(self.target_shape))
        if self.position_tolerance <= 0 or self.orientation_tolerance <= 0:
            raise ValueError('tolerances must be positive')

    @property
    def fixture_shape(self):
        return Shape.SORTER if self.kind == TaskKind.SHAPE_SORTING else Shape.PAD


def make_task(kind, target_shape, config):
    """Task whose goal is the target's sorter slot (shape sorting) or the pad centre (pick and place)."""
    kind, target_shape = TaskKind(kind), Shape(target_shape)
    fx, fy = config.fixture_position
    if kind == TaskKind.SHAPE_SORTING:
        sx, sy = SORTER_SLOTS[target_shape]
        return TaskSpec(kind, target_shape, RigidTransform.from_yaw(0.0, (fx + sx, fy + sy, 0.0)),
                        config.position_tolerance, config.orientation_tolerance)
    return TaskSpec(kind, target_shape, RigidTransform.from_yaw(0.0, (fx, fy, 0.0)),
                    config.pad_tolerance, math.pi)


@dataclass(frozen=True)
class SceneObject:
    id: int
    shape: str
    pose: RigidTransform
    color: tuple
    grasped: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'shape', Shape(self.shape))
        object.__setattr__(self, 'color', tuple(float(c) for c in self.color))
        if self.id < 1:
            raise ValueError('object ids start at 1')

    @property
    def geometry(self):
        return geometry(self.shape)

    @property
    def top_center(self):
        return self.pose.apply((0.0, 0.0, self.geometry.height))

    @property
    def is_fixture(self):
        return self.id == FIXTURE_ID


@dataclass(frozen=True)
class StageHistory:
    reached_above_target: bool = False
    grasped_target: bool = False


@dataclass(frozen=True)
class WorldState:
    objects: tuple
    ee_pose: RigidTransform
    gripper_open: bool
    task: TaskSpec
    seed: int
    config: SceneConfig
    # end-effector to grasped-object transform while something is held
    grasp_offset: RigidTransform = None
    history: StageHistory = field(default_factory=StageHistory)

    def __post_init__(self):
        ids = [obj.id for obj in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError('object ids must be unique')
        if sum(obj.grasped for obj in self.objects) > 1:
            raise ValueError('at most one object can be grasped')

    def object_by_shape(self, shape):
        shape = Shape(shape)
        return next((obj for obj in self.objects if obj.shape == shape), None)

    def object_by_id(self, object_id):
        return next((obj for obj in self.objects if obj.id == object_id), None)

    @property
    def target(self):
        return self.object_by_shape(self.task.target_shape)

    @property
    def held(self):
        return next((obj for obj in self.objects if obj.grasped), None)

    @property
    def grasp_point(self):
        return self.ee_pose.apply(self.config.grasp_offset)

    @property
    def digest(self):
        return scene_digest(self.objects)


def scene_digest(objects):
    """Fingerprint of object ids, shapes and poses."""
    content = repr(sorted(
        (obj.id, str(obj.shape), obj.pose.quaternion, obj.pose.translation, obj.grasped) for obj in objects
    ))
    return hashlib.sha1(content.encode('utf-8')).hexdigest()


def planar_pose(pose, height=0.0):
    """Drop roll and pitch and put the pose down at ``height``."""
    x, y, _ = pose.translation
    return RigidTransform.from_yaw(pose.yaw, (x, y, height))


def within_workspace(pose, config):
    position = np.array(pose.translation)
    return bool(np.all(position >= np.array(config.workspace_min) - 1e-12)
                and np.all(position <= np.array(config.workspace_max) + 1e-12))


def ee_pose_for_grasp_point(point, yaw, config):
    """Downward-looking end-effector pose whose grasp point sits at ``point``."""
    orientation = RigidTransform.looking_down(yaw, (0.0, 0.0, 0.0))
    position = np.asarray(point, dtype=np.float64) - orientation.rotation @ np.asarray(config.grasp_offset)
    return RigidTransform(orientation.quaternion, position)


def _fixture_keepout_clear(x, y, radius, config):
    half_x, half_y = geometry(Shape.SORTER).half_extents
    fx, fy = config.fixture_position
    margin = radius + config.clearance
    return abs(x - fx) >= half_x + margin or abs(y - fy) >= half_y + margin


def reset(task, seed, config=None):
    config = config or SceneConfig.from_settings()
    rng = np.random.default_rng(seed)

    fixture_shape = task.fixture_shape
    fixture = SceneObject(
        id=FIXTURE_ID,
        shape=fixture_shape,
        pose=RigidTransform.from_yaw(0.0, (*config.fixture_position, 0.0)),
        color=geometry(fixture_shape).color,
    )

    placed = []
    low, high = np.array(config.placement_min), np.array(config.placement_max)
    for shape in config.shapes:
        shape_geometry = geometry(shape)
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x, y = rng.uniform(low, high)
            yaw = rng.uniform(-math.pi, math.pi)
            if not _fixture_keepout_clear(x, y, shape_geometry.radius, config):
                continue
            if all(math.hypot(x - ox, y - oy) >= shape_geometry.radius + other.radius + config.clearance
                   for (ox, oy), other in ((obj.pose.translation[:2], obj.geometry) for obj in placed)):
                break
        else:
            raise PlacementFailure(f'Could not place {shape} after {MAX_PLACEMENT_ATTEMPTS} attempts (seed {seed}).')
        placed.append(SceneObject(
            id=shape_geometry.object_id,
            shape=shape,
            pose=RigidTransform.from_yaw(float(yaw), (float(x), float(y), 0.0)),
            color=shape_geometry.color,
        ))

    return WorldState(
        objects=(fixture, *placed),
        ee_pose=config.home_pose,
        gripper_open=True,
        task=task,
        seed=seed,
        config=config,
    )


def _rest_height(state, x, y):
    fixture = state.object_by_id(FIXTURE_ID)
    if fixture is not None:
        local = fixture.pose.inverse().apply((x, y, 0.0))
        if fixture.geometry.contains(local[0], local[1]):
            return fixture.geometry.height
    return 0.0


def _xy_distance(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def step(state, action):
    config = state.config
    delta = clamp_delta(action.delta, config.max_step_translation, config.max_step_rotation)
    ee_pose = state.ee_pose.compose(delta)
    if not within_workspace(ee_pose, config):
        raise WorkspaceViolation(f'End-effector would move to {ee_pose.translation}.')

    objects = list(state.objects)
    grasp_offset = state.grasp_offset
    gripper_open = state.gripper_open

    if grasp_offset is not None:
        objects = [replace(obj, pose=ee_pose.compose(grasp_offset)) if obj.grasped else obj for obj in objects]

    grasp_point = ee_pose.apply(config.grasp_offset)
    if action.gripper == Gripper.CLOSE and gripper_open:
        gripper_open = False
        candidates = [
            (np.linalg.norm(obj.top_center - grasp_point), index)
            for index, obj in enumerate(objects) if not obj.is_fixture
        ]
        if candidates:
            distance, index = min(candidates)
            if distance <= config.grasp_radius:
                grasp_offset = ee_pose.inverse().compose(objects[index].pose)
                objects[index] = replace(objects[index], grasped=True)
                logger.debug('grasped %s at %.4f m from the grasp point', objects[index].shape, distance)
    elif action.gripper == Gripper.OPEN and not gripper_open:
        gripper_open = True
        grasp_offset = None
        for index, obj in enumerate(objects):
            if obj.grasped:
                x, y, _ = obj.pose.translation
                objects[index] = replace(obj, pose=planar_pose(obj.pose, _rest_height(state, x, y)), grasped=False)

    new_state = replace(state, objects=tuple(objects), ee_pose=ee_pose, gripper_open=gripper_open,
                        grasp_offset=grasp_offset)
    return replace(new_state, history=_update_history(new_state))


def _update_history(state):
    history = state.history
    target = state.target
    if target is None:
        return history
    grasped = history.grasped_target or target.grasped
    reached = history.reached_above_target or grasped
    if not target.grasped and not history.grasped_target:
        reached = reached or _xy_distance(state.grasp_point, target.pose.translation) <= state.task.position_tolerance
    return StageHistory(reached_above_target=reached, grasped_target=grasped)


@dataclass(frozen=True)
class StageOutcome:
    correct_position: bool = False
    correct_grasp: bool = False
    correct_orientation: bool = False
    success: bool = False


def yaw_error(obj, goal_pose):
    return symmetric_yaw_error(obj.pose.yaw, goal_pose.yaw, obj.geometry.symmetry)


def evaluate_stages(state, task=None):
    task = task or state.task
    target = state.object_by_shape(task.target_shape)
    if target is None:
        return StageOutcome()
    correct_position = state.history.reached_above_target
    correct_grasp = correct_position and state.history.grasped_target
    correct_orientation = correct_grasp and yaw_error(target, task.goal_pose) <= task.orientation_tolerance
    success = (
        correct_orientation
        and not target.grasped
        and _xy_distance(target.pose.translation, task.goal_pose.translation) <= task.position_tolerance
    )
    return StageOutcome(correct_position, correct_grasp, correct_orientation, success)
