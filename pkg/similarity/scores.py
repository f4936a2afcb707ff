"""
State comparison scores.

The flow score adds the masked reprojection distance and ``k`` times the masked mean flow; lower
is better. Inlier counts and embedding cosines are higher-is-better. ``normalize`` maps every kind
onto (0, 1] so that scores can be multiplied along a path.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from django.db import models

from core.exceptions import EmptyMask, NoConsensus, NoKeypoints, TooFewPoints
from correspondence.backends import KeypointBackend, lift
from correspondence.flow import warp
from pose.estimation import RansacConfig, ransac_rigid

logger = logging.getLogger(__name__)

EPSILON = 1e-12


class ScoreKind(models.TextChoices):
    FS = 'fs', 'Flow score'
    INLIER_COUNT = 'inlier_count', 'Inlier count'
    EMBEDDING = 'embedding', 'Embedding'


class Orientation(models.TextChoices):
    DISTANCE_LIKE = 'distance_like', 'Lower is better'
    SIMILARITY_LIKE = 'similarity_like', 'Higher is better'


ORIENTATION = {
    ScoreKind.FS: Orientation.DISTANCE_LIKE,
    ScoreKind.INLIER_COUNT: Orientation.SIMILARITY_LIKE,
    ScoreKind.EMBEDDING: Orientation.SIMILARITY_LIKE,
}


def orientation(kind):
    return ORIENTATION[ScoreKind(kind)]


@dataclass(frozen=True)
class SimilarityResult:
    raw: float
    normalized: float
    kind: str
    valid_pixel_fraction: float = 1.0
    # rigid fit behind an inlier count, when there is one
    fit: object = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', ScoreKind(self.kind))
        if not 0 < self.normalized <= 1:
            raise ValueError(f'normalized score {self.normalized} outside (0, 1]')
        if not 0 <= self.valid_pixel_fraction <= 1:
            raise ValueError('valid_pixel_fraction must lie in [0, 1]')

    @property
    def orientation(self):
        return orientation(self.kind)


def normalize(raw, kind, temperature=1.0, cap=1.0, epsilon=EPSILON):
    """
    Map a raw score to (0, 1].

    Distances become ``exp(-raw / temperature)``; similarities are divided by ``cap``. Both are
    clamped to ``[epsilon, 1]``.
    """
    if temperature <= 0:
        raise ValueError('temperature must be positive')
    if orientation(kind) == Orientation.DISTANCE_LIKE:
        value = math.exp(-raw / temperature) if math.isfinite(raw) else 0.0
    else:
        if cap <= 0:
            raise ValueError('cap must be positive')
        value = raw / cap if math.isfinite(raw) else (1.0 if raw > 0 else 0.0)
    return min(1.0, max(epsilon, value))


def _flow_pixels(mask, flow):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != flow.shape:
        raise ValueError('mask and flow must share dimensions')
    selected = mask & flow.valid
    if not selected.any():
        raise EmptyMask('No masked pixel carries valid flow.')
    return selected


def reprojection_distance(demo, live, mask, flow):
    """Mean colour distance between the demo and the flow-warped live view over valid masked pixels."""
    warped, defined = warp(live, flow)
    selected = _flow_pixels(mask, flow) & defined
    if not selected.any():
        raise EmptyMask('Every masked flow vector leaves the live image.')
    difference = warped[selected] - demo.rgb[selected].astype(np.float64)
    return float(np.linalg.norm(difference, axis=-1).mean())


def mean_flow(mask, flow):
    """Mean flow vector length in pixels over valid masked pixels."""
    selected = _flow_pixels(mask, flow)
    return float(np.linalg.norm(flow.flow[selected], axis=-1).mean())


def sim_fs(demo, live, mask, flow, k=0.5, temperature=1.0):
    mask = np.asarray(mask, dtype=bool)
    raw = reprojection_distance(demo, live, mask, flow) + k * mean_flow(mask, flow)
    fraction = float((mask & flow.valid).sum() / max(mask.sum(), 1))
    return SimilarityResult(raw, normalize(raw, ScoreKind.FS, temperature), ScoreKind.FS, fraction)


def inlier_similarity(demo, live, mask, ransac_cfg=None, matcher=None, demo_objects=(), live_objects=(),
                      cap=200.0):
    """
    Number of correspondences consistent with the best rigid fit.

    Correspondences come from ``matcher`` (keypoints by default) and are lifted to 3D with both
    depth maps. Detection and fitting failures count as zero inliers.
    """
    ransac_cfg = ransac_cfg or RansacConfig()
    matcher = matcher or KeypointBackend()
    try:
        result = matcher.correspond(demo, live, mask, demo_objects, live_objects)
        corrs = lift(demo, live, mask, result)
        fit = ransac_rigid(corrs, ransac_cfg.threshold_m, ransac_cfg.iterations, ransac_cfg.seed)
    except (NoKeypoints, NoConsensus, TooFewPoints, EmptyMask) as exc:
        logger.debug('inlier score folded to zero: %s', exc)
        return SimilarityResult(0.0, normalize(0.0, ScoreKind.INLIER_COUNT, cap=cap), ScoreKind.INLIER_COUNT, 0.0)
    raw = float(fit.inlier_count)
    fraction = min(1.0, fit.inlier_count / max(int(np.asarray(mask, dtype=bool).sum()), 1))
    return SimilarityResult(raw, normalize(raw, ScoreKind.INLIER_COUNT, cap=cap), ScoreKind.INLIER_COUNT,
                            fraction, fit)
