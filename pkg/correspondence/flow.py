"""
Dense demo→live flow fields.

A flow vector ``(u, v)`` at demo pixel ``(x, y)`` says the same surface point shows up at
``(x + u, y + v)`` in the live frame. ``warp`` uses the same direction to pull live colours back
onto the demo grid.
"""
import logging
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from core.camera import pixel_grid, project_points, unproject_pixels
from core.exceptions import StateMismatch
from simulator.world import scene_digest

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FlowField:
    flow: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        flow = np.array(self.flow, dtype=np.float64, copy=True)
        valid = np.array(self.valid, dtype=bool, copy=True)
        if flow.shape != valid.shape + (2,):
            raise ValueError('flow must be H×W×2 over an H×W validity mask')
        flow[~valid] = 0.0
        flow.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, 'flow', flow)
        object.__setattr__(self, 'valid', valid)

    @classmethod
    def invalid(cls, shape):
        return cls(np.zeros(tuple(shape) + (2,)), np.zeros(shape, dtype=bool))

    @property
    def shape(self):
        return self.valid.shape

    @property
    def magnitude(self):
        return np.linalg.norm(self.flow, axis=-1)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.flow, other.flow) and np.array_equal(self.valid, other.valid)

    __hash__ = None


def _objects_of(world):
    return tuple(getattr(world, 'objects', world))


def _check_rendered_from(frame, objects, side):
    if frame.scene_digest != scene_digest(objects):
        raise StateMismatch(f'The {side} frame was not rendered from the supplied scene.')


def noise_generator(seed, live):
    """Generator seeded by ``seed`` and the live depth bytes, so every new observation draws fresh noise."""
    return np.random.default_rng([int(seed), zlib.crc32(live.depth.tobytes())])


def limit_capture_range(field, max_flow_px, breakdown_fraction, mask=None):
    """
    Model a flow estimator that only resolves small displacements.

    Vectors longer than ``max_flow_px`` are shortened to that length; when more than
    ``breakdown_fraction`` of the considered valid pixels exceed it, nothing is trusted at all.
    """
    if max_flow_px is None:
        return field
    considered = field.valid if mask is None else field.valid & np.asarray(mask, dtype=bool)
    if not considered.any():
        return field
    lengths = field.magnitude
    too_long = lengths > max_flow_px
    if too_long[considered].mean() > breakdown_fraction:
        logger.debug('flow broke down: %.0f%% of pixels beyond %.1f px',
                     100 * too_long[considered].mean(), max_flow_px)
        return FlowField.invalid(field.shape)
    scale = np.where(too_long, max_flow_px / np.maximum(lengths, 1e-12), 1.0)
    return FlowField(field.flow * scale[..., None], field.valid)


def oracle_flow(demo, live, world_demo, world_live, noise_px=0.0, seed=0,
                max_flow_px=None, breakdown_fraction=0.5, mask=None):
    """
    Ground-truth flow from the simulator's object poses.

    Each demo pixel is carried along with the object it shows (the table stays put), projected into
    the live camera and kept only if it lands inside the image and the live frame shows the same
    object at the nearest pixel. Flow is measured from the pixel's own reprojection, so anything
    that stays put has exactly zero flow.
    """
    demo_objects, live_objects = _objects_of(world_demo), _objects_of(world_live)
    _check_rendered_from(demo, demo_objects, 'demo')
    _check_rendered_from(live, live_objects, 'live')
    if demo.shape != live.shape:
        raise ValueError('demo and live frames must share dimensions')

    xs, ys = pixel_grid(demo.shape)
    depth = demo.depth.astype(np.float64)
    world = demo.camera_pose.apply(unproject_pixels(demo.intrinsics, xs, ys, depth).reshape(-1, 3))
    ids = demo.object_ids.reshape(-1)
    source_ok = depth.reshape(-1) > 0

    live_by_id = {obj.id: obj for obj in live_objects}
    moved = world.copy()
    for obj in demo_objects:
        selected = ids == obj.id
        counterpart = live_by_id.get(obj.id)
        if counterpart is None:
            source_ok &= ~selected
            continue
        if counterpart.pose != obj.pose:
            moved[selected] = counterpart.pose.compose(obj.pose.inverse()).apply(world[selected])

    source_x, source_y = project_points(demo.intrinsics, demo.camera_pose.inverse().apply(world))
    target_x, target_y = project_points(live.intrinsics, live.camera_pose.inverse().apply(moved))
    height, width = demo.shape
    with np.errstate(invalid='ignore'):
        inside = (target_x >= 0) & (target_x <= width - 1) & (target_y >= 0) & (target_y <= height - 1)
    valid = source_ok & inside
    tx = np.where(valid, target_x, 0.0)
    ty = np.where(valid, target_y, 0.0)
    valid &= live.object_ids[np.rint(ty).astype(np.int64), np.rint(tx).astype(np.int64)] == ids

    flow = np.stack([tx - np.where(valid, source_x, 0.0), ty - np.where(valid, source_y, 0.0)], axis=-1)
    if noise_px > 0:
        flow = flow + noise_generator(seed, live).normal(0.0, noise_px, size=flow.shape)
    field = FlowField(flow.reshape(demo.shape + (2,)), valid.reshape(demo.shape))
    return limit_capture_range(field, max_flow_px, breakdown_fraction, mask)


def _shifted(image, dx, dy, fill=np.nan):
    """``out[y, x] = image[y + dy, x + dx]``, filled where that falls outside the image."""
    out = np.full_like(image, fill, dtype=np.float64)
    height, width = image.shape[:2]
    dst_y = slice(max(0, -dy), min(height, height - dy))
    dst_x = slice(max(0, -dx), min(width, width - dx))
    src_y = slice(max(0, dy), min(height, height + dy))
    src_x = slice(max(0, dx), min(width, width + dx))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def patch_match_flow(demo, live, mask, patch=2, search=4, ssd_ceiling=0.05):
    """
    Integer block matching by exhaustive SSD search.

    For every masked demo pixel, the ``(2·patch+1)²`` colour patch is compared against every live
    patch within ``search`` pixels. A pixel is valid when its best offset is strictly better than
    every other one and the mean squared difference per patch pixel stays below ``ssd_ceiling``.
    Patches reaching past either image border never match.
    """
    if patch < 1 or search < 1:
        raise ValueError('patch and search must be at least 1')
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != demo.shape or demo.shape != live.shape:
        raise ValueError('mask, demo and live must share dimensions')

    size = 2 * patch + 1
    window = np.ones((size, size))
    area = size * size
    demo_rgb = demo.rgb.astype(np.float64)
    live_rgb = live.rgb.astype(np.float64)
    # demo patches that leave the image are excluded outright
    demo_complete = ndimage.correlate(np.ones(demo.shape), window, mode='constant', cval=0.0) == area

    best = np.full(demo.shape, np.inf)
    second = np.full(demo.shape, np.inf)
    best_offset = np.zeros(demo.shape + (2,))
    for dy in range(-search, search + 1):
        for dx in range(-search, search + 1):
            moved = _shifted(live_rgb, dx, dy)
            squared = ((moved - demo_rgb) ** 2).sum(axis=-1)
            present = np.isfinite(squared)
            ssd = ndimage.correlate(np.where(present, squared, 0.0), window, mode='constant', cval=0.0)
            complete = ndimage.correlate(present.astype(np.float64), window, mode='constant', cval=0.0) == area
            ssd = np.where(complete & demo_complete, ssd, np.inf)
            improves = ssd < best
            second = np.where(improves, best, np.minimum(second, ssd))
            best = np.where(improves, ssd, best)
            best_offset[improves] = (dx, dy)

    unique = second - best > 1e-12
    valid = mask & np.isfinite(best) & unique & (best / area <= ssd_ceiling)
    return FlowField(best_offset, valid)


def bilinear_sample(image, x, y):
    """Sample ``image`` at float coordinates; coordinates are clipped to the image."""
    height, width = image.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, width - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, height - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), width - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), height - 2)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    image = np.asarray(image, dtype=np.float64)
    return (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, x0 + 1] * fx * (1 - fy)
        + image[y0 + 1, x0] * (1 - fx) * fy
        + image[y0 + 1, x0 + 1] * fx * fy
    )


def warp(live, flow):
    """
    Pull live colours onto the demo grid: ``out[y, x] = live.rgb(x + u, y + v)``.

    Returns the warped H×W×3 image and the pixels it is defined on (valid flow landing inside the
    live image).
    """
    field = flow if isinstance(flow, FlowField) else FlowField(flow, np.ones(live.shape, dtype=bool))
    if field.shape != live.shape:
        raise ValueError('flow and live frame must share dimensions')
    xs, ys = pixel_grid(live.shape)
    target_x = xs + field.flow[..., 0]
    target_y = ys + field.flow[..., 1]
    height, width = live.shape
    inside = (target_x >= 0) & (target_x <= width - 1) & (target_y >= 0) & (target_y <= height - 1)
    return bilinear_sample(live.rgb, target_x, target_y), field.valid & inside
