"""
Sparse keypoint matching: Harris corners, normalised patch descriptors and mutual nearest neighbours.

Demo keypoints are detected inside the foreground mask only; live keypoints anywhere in the image.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from core.exceptions import NoKeypoints

logger = logging.getLogger(__name__)

HARRIS_K = 0.04
HARRIS_SIGMA = 1.0
# responses below this fraction of the strongest one are noise
RELATIVE_THRESHOLD = 1e-3


@dataclass(frozen=True, eq=False)
class KeypointMatches:
    """Matched pixel pairs; pixels are (x, y) = (column, row) and scores lie in [0, 1]."""
    demo_pixels: np.ndarray
    live_pixels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        demo = np.array(self.demo_pixels, dtype=np.float64, copy=True).reshape(-1, 2)
        live = np.array(self.live_pixels, dtype=np.float64, copy=True).reshape(-1, 2)
        scores = np.array(self.scores, dtype=np.float64, copy=True).reshape(-1)
        if not (len(demo) == len(live) == len(scores)):
            raise ValueError('pixel lists and scores must have equal length')
        if not np.all(np.isfinite(scores)) or np.any(scores < 0) or np.any(scores > 1):
            raise ValueError('scores must lie in [0, 1]')
        for array in (demo, live, scores):
            array.setflags(write=False)
        object.__setattr__(self, 'demo_pixels', demo)
        object.__setattr__(self, 'live_pixels', live)
        object.__setattr__(self, 'scores', scores)

    @property
    def pairs(self):
        return [(tuple(d), tuple(l), float(s)) for d, l, s in zip(self.demo_pixels, self.live_pixels, self.scores)]

    def __len__(self):
        return len(self.scores)

    def __eq__(self, other):
        if not isinstance(other, KeypointMatches):
            return NotImplemented
        return (np.array_equal(self.demo_pixels, other.demo_pixels)
                and np.array_equal(self.live_pixels, other.live_pixels)
                and np.array_equal(self.scores, other.scores))

    __hash__ = None


def grayscale(rgb):
    return np.asarray(rgb, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])


def harris_response(gray, sigma=HARRIS_SIGMA, k=HARRIS_K):
    gx = ndimage.sobel(gray, axis=1, mode='nearest')
    gy = ndimage.sobel(gray, axis=0, mode='nearest')
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode='nearest')
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode='nearest')
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode='nearest')
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_keypoints(rgb, mask=None, nms_radius=3, max_keypoints=200, border=3):
    """
    Corner pixels as (x, y) integer rows, strongest first.

    Local maxima of the Harris response over a ``(2·nms_radius+1)²`` window, at least ``border``
    pixels from the image edge so that descriptors fit. Ties keep raster order.
    """
    response = harris_response(grayscale(rgb))
    peak = response.max(initial=0.0)
    if peak <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    local_max = ndimage.maximum_filter(response, size=2 * nms_radius + 1, mode='nearest') == response
    candidates = local_max & (response > RELATIVE_THRESHOLD * peak)
    candidates[:border, :] = candidates[-border:, :] = False
    candidates[:, :border] = candidates[:, -border:] = False
    if mask is not None:
        candidates &= np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(candidates)
    order = np.argsort(-response[rows, cols], kind='stable')[:max_keypoints]
    return np.stack([cols[order], rows[order]], axis=-1)


def describe(rgb, keypoints, half=3):
    """Zero-mean, unit-norm colour patches; flat patches come back as all-zero rows."""
    rgb = np.asarray(rgb, dtype=np.float64)
    offsets = np.arange(-half, half + 1)
    descriptors = np.zeros((len(keypoints), (2 * half + 1) ** 2 * 3))
    for index, (x, y) in enumerate(keypoints):
        patch = rgb[y + offsets[:, None], x + offsets[None, :]].reshape(-1)
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm > 1e-9:
            descriptors[index] = patch / norm
    return descriptors


def mutual_nearest_neighbours(demo_descriptors, live_descriptors, min_score=0.7):
    """Index pairs whose correlation is each other's best and at least ``min_score``."""
    similarity = demo_descriptors @ live_descriptors.T
    forward = np.argmax(similarity, axis=1)
    backward = np.argmax(similarity, axis=0)
    demo_index = np.arange(len(demo_descriptors))
    scores = similarity[demo_index, forward]
    keep = (backward[forward] == demo_index) & (scores >= min_score)
    return demo_index[keep], forward[keep], np.clip(scores[keep], 0.0, 1.0)


def match_keypoints(demo, live, mask, nms_radius=3, max_keypoints=200, descriptor_half=3, min_score=0.7):
    demo_points = detect_keypoints(demo.rgb, mask, nms_radius, max_keypoints, border=descriptor_half)
    live_points = detect_keypoints(live.rgb, None, nms_radius, max_keypoints, border=descriptor_half)
    if len(demo_points) < 3 or len(live_points) < 3:
        raise NoKeypoints(f'Detected {len(demo_points)} demo and {len(live_points)} live keypoints.')
    demo_index, live_index, scores = mutual_nearest_neighbours(
        describe(demo.rgb, demo_points, descriptor_half),
        describe(live.rgb, live_points, descriptor_half),
        min_score,
    )
    logger.debug('matched %d of %d demo keypoints', len(scores), len(demo_points))
    return KeypointMatches(demo_points[demo_index], live_points[live_index], scores)
