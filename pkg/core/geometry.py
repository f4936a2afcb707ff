import math
from dataclasses import dataclass, field

import numpy as np
from django.db import models
from scipy.spatial.transform import Rotation


def _canonical(quat):
    quat = np.asarray(quat, dtype=np.float64).reshape(4)
    norm = np.linalg.norm(quat)
    # leave already-unit quaternions untouched so stored transforms reload bit-exactly
    if abs(norm - 1.0) > 1e-12:
        quat = quat / norm
    # q and -q are the same rotation; keep w >= 0 so equal rotations compare equal
    if quat[3] < 0 or (quat[3] == 0 and next(q for q in quat if q != 0) < 0):
        quat = -quat
    return tuple(float(q) + 0.0 for q in quat)


@dataclass(frozen=True)
class RigidTransform:
    """
    Element of SE(3): ``p -> R p + t``.

    The rotation is held as a canonical unit quaternion ``(x, y, z, w)`` with ``w >= 0`` and is
    renormalized whenever a new transform is built, so long chains of compositions do not drift.
    """
    quaternion: tuple = (0.0, 0.0, 0.0, 1.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, 'quaternion', _canonical(self.quaternion))
        translation = tuple(float(v) for v in np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not all(math.isfinite(v) for v in translation):
            raise ValueError('translation must be finite')
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rotation(cls, rotation, translation=(0.0, 0.0, 0.0)):
        return cls(tuple(rotation.as_quat()), translation)

    @classmethod
    def from_matrix(cls, rotation, translation=(0.0, 0.0, 0.0)):
        return cls.from_rotation(Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)), translation)

    @classmethod
    def from_homogeneous(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls.from_matrix(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls.from_rotation(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)), translation)

    @classmethod
    def from_yaw(cls, yaw, translation=(0.0, 0.0, 0.0)):
        return cls.from_rotvec((0.0, 0.0, yaw), translation)

    @classmethod
    def looking_down(cls, yaw, position):
        """Camera/end-effector pose above the table: optical axis along world -z, rotated by yaw."""
        rotation = Rotation.from_rotvec((0.0, 0.0, yaw)) * Rotation.from_rotvec((math.pi, 0.0, 0.0))
        return cls.from_rotation(rotation, position)

    @property
    def rotation_object(self):
        return Rotation.from_quat(self.quaternion)

    @property
    def rotation(self):
        return self.rotation_object.as_matrix()

    @property
    def translation_vector(self):
        return np.array(self.translation, dtype=np.float64)

    @property
    def rotvec(self):
        return self.rotation_object.as_rotvec()

    @property
    def matrix(self):
        homogeneous = np.eye(4)
        homogeneous[:3, :3] = self.rotation
        homogeneous[:3, 3] = self.translation
        return homogeneous

    @property
    def yaw(self):
        rotation = self.rotation
        return math.atan2(rotation[1, 0], rotation[0, 0])

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation_vector

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        rotation = self.rotation_object * other.rotation_object
        translation = self.rotation @ other.translation_vector + self.translation_vector
        return RigidTransform.from_rotation(rotation, translation)

    def inverse(self):
        inverse_rotation = self.rotation_object.inv()
        return RigidTransform.from_rotation(inverse_rotation, -(inverse_rotation.as_matrix() @ self.translation_vector))

    def scaled(self, gain):
        """Scale rotation vector and translation by ``gain`` (a partial step along the same screw)."""
        return RigidTransform.from_rotvec(self.rotvec * gain, self.translation_vector * gain)

    def __matmul__(self, other):
        return self.compose(other)


def compose(a, b):
    return a.compose(b)


def inverse(a):
    return a.inverse()


@dataclass(frozen=True)
class TransformMagnitude:
    translation_norm: float = 0.0
    rotation_angle: float = 0.0

    def below(self, trans_threshold, rot_threshold):
        return self.translation_norm < trans_threshold and self.rotation_angle < rot_threshold


def magnitude(transform):
    cos_angle = (np.trace(transform.rotation) - 1.0) / 2.0
    return TransformMagnitude(
        translation_norm=float(np.linalg.norm(transform.translation_vector)),
        rotation_angle=float(np.arccos(np.clip(cos_angle, -1.0, 1.0))),
    )


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def symmetric_yaw_error(yaw_a, yaw_b, period):
    """Smallest yaw difference modulo a rotational symmetry ``period`` (``None`` = fully symmetric)."""
    if period is None:
        return 0.0
    return abs(math.remainder(yaw_a - yaw_b, period))


def clamp_delta(delta, max_translation, max_rotation):
    """Shrink a step so that it respects the per-step translation and rotation limits."""
    size = magnitude(delta)
    factor = 1.0
    if size.translation_norm > max_translation:
        factor = min(factor, max_translation / size.translation_norm)
    if size.rotation_angle > max_rotation:
        factor = min(factor, max_rotation / size.rotation_angle)
    if factor >= 1.0:
        return delta
    # keep a hair under the limits so the clamped step never trips them through rounding
    return delta.scaled(factor * (1.0 - 1e-9))


class Gripper(models.TextChoices):
    OPEN = 'open', 'Open'
    CLOSE = 'close', 'Close'
    HOLD = 'hold', 'Hold'


@dataclass(frozen=True)
class Action:
    delta: RigidTransform = field(default_factory=RigidTransform)
    gripper: str = Gripper.HOLD

    def __post_init__(self):
        object.__setattr__(self, 'gripper', Gripper(self.gripper))
