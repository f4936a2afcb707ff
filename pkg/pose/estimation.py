"""
Rigid alignment of masked 3D correspondences.

``correspondences_to_3d`` lifts a demo→live pixel flow to metric point pairs, ``least_squares_rigid``
solves the weighted orthogonal Procrustes problem in closed form and ``ransac_rigid`` wraps it in a
seeded hypothesise-and-verify loop.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.db import models

from core.camera import unproject_pixels
from core.exceptions import DegenerateConfiguration, EmptyMask, NoConsensus, TooFewPoints
from core.geometry import RigidTransform

logger = logging.getLogger(__name__)


class Fitter(models.TextChoices):
    PLAIN = 'plain', 'Plain'
    RANSAC = 'ransac', 'RANSAC'


@dataclass(frozen=True)
class Correspondence3D:
    demo_point: tuple
    live_point: tuple
    weight: float = 1.0


class CorrespondenceSet:
    """Array-backed list of ``Correspondence3D``."""

    def __init__(self, demo_points, live_points, weights=None):
        self.demo_points = np.asarray(demo_points, dtype=np.float64).reshape(-1, 3)
        self.live_points = np.asarray(live_points, dtype=np.float64).reshape(-1, 3)
        if weights is None:
            weights = np.ones(len(self.demo_points))
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if not (len(self.demo_points) == len(self.live_points) == len(self.weights)):
            raise ValueError('demo points, live points and weights must have equal length')
        if np.any(self.weights < 0):
            raise ValueError('weights must be non-negative')
        if not (np.all(np.isfinite(self.demo_points)) and np.all(np.isfinite(self.live_points))):
            raise ValueError('points must be finite')

    @classmethod
    def coerce(cls, corrs):
        if isinstance(corrs, cls):
            return corrs
        corrs = list(corrs)
        if not corrs:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
        return cls(
            [c.demo_point for c in corrs],
            [c.live_point for c in corrs],
            [c.weight for c in corrs],
        )

    def subset(self, index):
        return CorrespondenceSet(self.demo_points[index], self.live_points[index], self.weights[index])

    def __len__(self):
        return len(self.weights)

    def __iter__(self):
        for demo, live, weight in zip(self.demo_points, self.live_points, self.weights):
            yield Correspondence3D(tuple(demo), tuple(live), float(weight))

    def __getitem__(self, index):
        return Correspondence3D(tuple(self.demo_points[index]), tuple(self.live_points[index]),
                                float(self.weights[index]))


@dataclass(frozen=True)
class FitReport:
    transform: RigidTransform
    rms_residual: float
    inlier_count: int
    total_count: int


@dataclass(frozen=True)
class RansacConfig:
    threshold_m: float = 0.005
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.threshold_m <= 0:
            raise ValueError('threshold_m must be positive')
        if self.iterations < 1:
            raise ValueError('iterations must be at least 1')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        values = {
            'threshold_m': settings.RANSAC['THRESHOLD_M'],
            'iterations': settings.RANSAC['ITERATIONS'],
            'seed': settings.RANSAC['SEED'],
        }
        values.update(overrides)
        return cls(**values)


def correspondences_to_3d(demo, live, mask, flow):
    """
    Pair every masked demo pixel with the live pixel its flow vector lands on.

    ``flow`` is a ``FlowField`` (or a bare H×W×2 array, then every pixel counts as valid). Live depth
    is looked up at the nearest pixel while the lateral coordinates keep their sub-pixel position.
    """
    mask = np.asarray(mask, dtype=bool)
    vectors = np.asarray(getattr(flow, 'flow', flow), dtype=np.float64)
    valid = np.asarray(getattr(flow, 'valid', np.ones(mask.shape, dtype=bool)), dtype=bool)
    if mask.shape != demo.shape or vectors.shape != demo.shape + (2,) or valid.shape != demo.shape:
        raise ValueError('mask, flow and demo frame must share dimensions')

    rows, cols = np.nonzero(mask & valid & (demo.depth > 0))
    target_x = cols + vectors[rows, cols, 0]
    target_y = rows + vectors[rows, cols, 1]
    near_x = np.rint(target_x).astype(np.int64)
    near_y = np.rint(target_y).astype(np.int64)
    height, width = live.shape
    inside = (near_x >= 0) & (near_x < width) & (near_y >= 0) & (near_y < height)

    rows, cols = rows[inside], cols[inside]
    target_x, target_y = target_x[inside], target_y[inside]
    near_x, near_y = near_x[inside], near_y[inside]
    live_depth = live.depth[near_y, near_x].astype(np.float64)
    keep = live_depth > 0
    if not np.any(keep):
        raise EmptyMask('No masked pixel has a valid live target.')

    demo_points = unproject_pixels(demo.intrinsics, cols[keep], rows[keep], demo.depth[rows[keep], cols[keep]])
    live_points = unproject_pixels(live.intrinsics, target_x[keep], target_y[keep], live_depth[keep])
    return CorrespondenceSet(demo_points, live_points)


def matches_to_3d(demo, live, matches):
    """Lift matched keypoint pixels (``demo_pixels``/``live_pixels``) to camera-frame point pairs."""
    demo_px = np.rint(np.asarray(matches.demo_pixels)).astype(np.int64).reshape(-1, 2)
    live_px = np.rint(np.asarray(matches.live_pixels)).astype(np.int64).reshape(-1, 2)
    demo_depth = demo.depth[demo_px[:, 1], demo_px[:, 0]].astype(np.float64)
    live_depth = live.depth[live_px[:, 1], live_px[:, 0]].astype(np.float64)
    keep = (demo_depth > 0) & (live_depth > 0)
    if not np.any(keep):
        raise EmptyMask('No matched keypoint has valid depth on both sides.')
    demo_points = unproject_pixels(demo.intrinsics, demo_px[keep, 0], demo_px[keep, 1], demo_depth[keep])
    live_points = unproject_pixels(live.intrinsics, live_px[keep, 0], live_px[keep, 1], live_depth[keep])
    return CorrespondenceSet(demo_points, live_points)


def _solve(demo_points, live_points, weights):
    total = weights.sum()
    if total <= 0:
        raise TooFewPoints('Correspondence weights sum to zero.')
    w = weights / total
    demo_centroid = w @ demo_points
    live_centroid = w @ live_points
    demo_centered = demo_points - demo_centroid
    live_centered = live_points - live_centroid

    spread = np.linalg.svd(demo_centered * np.sqrt(w)[:, None], compute_uv=False)
    if spread[0] <= 0 or spread[1] < 1e-9 * spread[0]:
        raise DegenerateConfiguration()

    covariance = (demo_centered * w[:, None]).T @ live_centered
    U, _, Vt = np.linalg.svd(covariance)
    reflection = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    rotation = Vt.T @ np.diag([1.0, 1.0, reflection]) @ U.T
    translation = live_centroid - rotation @ demo_centroid
    return rotation, translation


def _residuals(rotation, translation, demo_points, live_points):
    return np.linalg.norm(demo_points @ rotation.T + translation - live_points, axis=1)


def least_squares_rigid(corrs):
    """Weighted rigid fit (no scale) minimizing Σ wᵢ‖T(demoᵢ) − liveᵢ‖²."""
    corrs = CorrespondenceSet.coerce(corrs)
    if len(corrs) < 3:
        raise TooFewPoints(f'Got {len(corrs)} correspondences.')
    rotation, translation = _solve(corrs.demo_points, corrs.live_points, corrs.weights)
    residuals = _residuals(rotation, translation, corrs.demo_points, corrs.live_points)
    return FitReport(
        transform=RigidTransform.from_matrix(rotation, translation),
        rms_residual=float(np.sqrt(np.mean(residuals ** 2))),
        inlier_count=len(corrs),
        total_count=len(corrs),
    )


def ransac_rigid(corrs, threshold_m=0.005, iterations=200, seed=0):
    corrs = CorrespondenceSet.coerce(corrs)
    if len(corrs) < 3:
        raise TooFewPoints(f'Got {len(corrs)} correspondences.')
    if threshold_m <= 0 or iterations < 1:
        raise ValueError('threshold_m must be positive and iterations at least 1')

    best = None
    for iteration in range(iterations):
        # one generator per iteration keeps the draw independent of evaluation order
        rng = np.random.default_rng([seed, iteration])
        sample = rng.choice(len(corrs), size=3, replace=False)
        try:
            rotation, translation = _solve(
                corrs.demo_points[sample], corrs.live_points[sample], np.ones(3),
            )
        except DegenerateConfiguration:
            continue
        inliers = _residuals(rotation, translation, corrs.demo_points, corrs.live_points) < threshold_m
        count = int(inliers.sum())
        if best is None or count > best.sum():
            best = inliers

    if best is None or best.sum() < 3:
        raise NoConsensus()

    inlier_set = corrs.subset(best)
    try:
        rotation, translation = _solve(inlier_set.demo_points, inlier_set.live_points, inlier_set.weights)
    except DegenerateConfiguration as exc:
        raise NoConsensus('Best inlier set is degenerate.') from exc
    residuals = _residuals(rotation, translation, inlier_set.demo_points, inlier_set.live_points)
    logger.debug('ransac kept %d of %d correspondences', len(inlier_set), len(corrs))
    return FitReport(
        transform=RigidTransform.from_matrix(rotation, translation),
        rms_residual=float(np.sqrt(np.mean(residuals ** 2))),
        inlier_count=len(inlier_set),
        total_count=len(corrs),
    )


def fit_rigid(corrs, fitter=Fitter.PLAIN, ransac=None):
    if Fitter(fitter) == Fitter.RANSAC:
        ransac = ransac or RansacConfig()
        return ransac_rigid(corrs, ransac.threshold_m, ransac.iterations, ransac.seed)
    return least_squares_rigid(corrs)
