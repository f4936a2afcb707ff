from dataclasses import dataclass, field

import numpy as np

from core.exceptions import BehindCamera, InvalidDepth, InvalidFrame, OutOfBounds
from core.geometry import RigidTransform


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidFrame('Focal lengths must be positive.')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidFrame('Principal point must lie inside the image.')

    @classmethod
    def from_settings(cls):
        from django.conf import settings

        sim = settings.SIMULATOR
        return cls(sim['FX'], sim['FY'], sim['CX'], sim['CY'], sim['IMAGE_WIDTH'], sim['IMAGE_HEIGHT'])

    @property
    def shape(self):
        return (self.height, self.width)


def _readonly(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Frame:
    """
    One RGB-D observation with per-pixel object labels.

    ``rgb`` is H×W×3 in [0, 1], ``depth`` is H×W metres along the optical axis (0 = invalid) and
    ``object_ids`` is H×W (0 = table/background). ``camera_pose`` maps camera to world coordinates.
    ``scene_digest`` fingerprints the simulated scene the frame was rendered from; frames from
    elsewhere leave it empty.
    """
    rgb: np.ndarray
    depth: np.ndarray
    object_ids: np.ndarray
    intrinsics: CameraIntrinsics
    camera_pose: RigidTransform = field(default_factory=RigidTransform)
    scene_digest: str = ''

    def __post_init__(self):
        rgb = _readonly(self.rgb, np.float32)
        depth = _readonly(self.depth, np.float32)
        object_ids = _readonly(self.object_ids, np.int32)

        if depth.ndim != 2 or rgb.shape != depth.shape + (3,) or object_ids.shape != depth.shape:
            raise InvalidFrame('rgb, depth and object_ids must share the same H×W.')
        if depth.shape != self.intrinsics.shape:
            raise InvalidFrame('Image size disagrees with the intrinsics.')
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise InvalidFrame('Depth must be finite and non-negative.')
        if np.any((object_ids != 0) & (depth <= 0)):
            raise InvalidFrame('Labelled pixels must carry positive depth.')

        object.__setattr__(self, 'rgb', rgb)
        object.__setattr__(self, 'depth', depth)
        object.__setattr__(self, 'object_ids', object_ids)

    @property
    def shape(self):
        return self.depth.shape

    def mask_of(self, object_id):
        return self.object_ids == object_id

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.intrinsics == other.intrinsics
            and self.camera_pose == other.camera_pose
            and self.scene_digest == other.scene_digest
            and np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.object_ids, other.object_ids)
        )

    __hash__ = None


def _pixel_index(frame, pixel):
    x, y = pixel
    col, row = int(np.rint(x)), int(np.rint(y))
    height, width = frame.shape
    if not (0 <= col < width and 0 <= row < height):
        raise OutOfBounds(f'Pixel {pixel} outside {width}x{height} image.')
    return row, col


def unproject(frame, pixel):
    """Lift pixel ``(x, y)`` (column, row) to a 3D point in the camera frame."""
    row, col = _pixel_index(frame, pixel)
    depth = float(frame.depth[row, col])
    if depth <= 0:
        raise InvalidDepth(f'Pixel {pixel} has no depth.')
    intrinsics = frame.intrinsics
    x, y = pixel
    return np.array([
        depth * (x - intrinsics.cx) / intrinsics.fx,
        depth * (y - intrinsics.cy) / intrinsics.fy,
        depth,
    ])


def project(intrinsics, point):
    X, Y, Z = (float(v) for v in point)
    if Z <= 0:
        raise BehindCamera(f'Point {tuple(point)} has Z = {Z}.')
    return (intrinsics.fx * X / Z + intrinsics.cx, intrinsics.fy * Y / Z + intrinsics.cy)


def unproject_pixels(intrinsics, xs, ys, depths):
    """Vectorised ``unproject`` for pixel coordinates that already carry their depth."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    return np.stack([
        depths * (xs - intrinsics.cx) / intrinsics.fx,
        depths * (ys - intrinsics.cy) / intrinsics.fy,
        depths,
    ], axis=-1)


def project_points(intrinsics, points):
    """Vectorised ``project``; points with Z <= 0 come back as NaN rather than raising."""
    points = np.asarray(points, dtype=np.float64)
    Z = points[..., 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        xs = np.where(Z > 0, intrinsics.fx * points[..., 0] / Z + intrinsics.cx, np.nan)
        ys = np.where(Z > 0, intrinsics.fy * points[..., 1] / Z + intrinsics.cy, np.nan)
    return xs, ys


def pixel_grid(shape):
    """Column (x) and row (y) coordinate arrays for an H×W image."""
    ys, xs = np.indices(shape, dtype=np.float64)
    return xs, ys


def frame_world_points(frame):
    """World coordinates of every pixel (NaN where depth is invalid)."""
    xs, ys = pixel_grid(frame.shape)
    depth = frame.depth.astype(np.float64)
    points = frame.camera_pose.apply(unproject_pixels(frame.intrinsics, xs, ys, depth).reshape(-1, 3))
    points = points.reshape(frame.shape + (3,))
    points[depth <= 0] = np.nan
    return points
