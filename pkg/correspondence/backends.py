"""
Interchangeable correspondence backends.

Every backend answers ``correspond(demo, live, mask, demo_objects=(), live_objects=())`` with either
a dense ``FlowField`` or sparse ``KeypointMatches``. Only the oracle looks at the object snapshots.
"""
from dataclasses import dataclass

from django.db import models

from correspondence.flow import oracle_flow, patch_match_flow
from correspondence.keypoints import match_keypoints
from pose.estimation import correspondences_to_3d, matches_to_3d


class BackendName(models.TextChoices):
    ORACLE = 'oracle', 'Oracle flow'
    PATCH_MATCH = 'patch_match', 'Patch matching'
    KEYPOINTS = 'keypoints', 'Keypoints'


@dataclass(frozen=True)
class OracleConfig:
    noise_px: float = 0.0
    seed: int = 0
    max_flow_px: float = None
    breakdown_fraction: float = 0.5

    def __post_init__(self):
        if self.noise_px < 0:
            raise ValueError('noise_px must be non-negative')
        if self.max_flow_px is not None and self.max_flow_px <= 0:
            raise ValueError('max_flow_px must be positive')
        if not 0 <= self.breakdown_fraction <= 1:
            raise ValueError('breakdown_fraction must lie in [0, 1]')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        values = {
            'noise_px': settings.CORRESPONDENCE['NOISE_PX'],
            'seed': settings.CORRESPONDENCE['SEED'],
            'max_flow_px': settings.CORRESPONDENCE['MAX_FLOW_PX'],
            'breakdown_fraction': settings.CORRESPONDENCE['BREAKDOWN_FRACTION'],
        }
        values.update(overrides)
        return cls(**values)


class OracleFlowBackend:
    name = BackendName.ORACLE
    dense = True

    def __init__(self, config=None):
        self.config = config or OracleConfig.from_settings()

    def correspond(self, demo, live, mask, demo_objects=(), live_objects=()):
        config = self.config
        return oracle_flow(demo, live, demo_objects, live_objects, config.noise_px, config.seed,
                           config.max_flow_px, config.breakdown_fraction, mask)

    def __repr__(self):
        return f'OracleFlowBackend({self.config})'


class PatchMatchBackend:
    name = BackendName.PATCH_MATCH
    dense = True

    def __init__(self, patch=2, search=4, ssd_ceiling=0.05):
        self.patch = patch
        self.search = search
        self.ssd_ceiling = ssd_ceiling

    def correspond(self, demo, live, mask, demo_objects=(), live_objects=()):
        return patch_match_flow(demo, live, mask, self.patch, self.search, self.ssd_ceiling)

    def __repr__(self):
        return f'PatchMatchBackend(patch={self.patch}, search={self.search})'


class KeypointBackend:
    name = BackendName.KEYPOINTS
    dense = False

    def __init__(self, nms_radius=3, max_keypoints=200, descriptor_half=3, min_score=0.7):
        self.nms_radius = nms_radius
        self.max_keypoints = max_keypoints
        self.descriptor_half = descriptor_half
        self.min_score = min_score

    def correspond(self, demo, live, mask, demo_objects=(), live_objects=()):
        return match_keypoints(demo, live, mask, self.nms_radius, self.max_keypoints,
                               self.descriptor_half, self.min_score)

    def __repr__(self):
        return f'KeypointBackend(nms_radius={self.nms_radius}, max_keypoints={self.max_keypoints})'


def lift(demo, live, mask, result):
    """Camera-frame 3D correspondences from either kind of backend result."""
    if hasattr(result, 'flow'):
        return correspondences_to_3d(demo, live, mask, result)
    return matches_to_3d(demo, live, result)


def make_backend(name=None, **params):
    """
    Build a backend by name; unspecified parameters come from ``settings.CORRESPONDENCE``.

    Oracle parameters: ``noise_px``, ``seed``, ``max_flow_px``, ``breakdown_fraction``.
    Patch matching: ``patch``, ``search``, ``ssd_ceiling``. Keypoints: ``nms_radius``,
    ``max_keypoints``, ``descriptor_half``, ``min_score``.
    """
    from django.conf import settings

    defaults = settings.CORRESPONDENCE
    name = BackendName(name or defaults['BACKEND'])
    if name == BackendName.ORACLE:
        return OracleFlowBackend(OracleConfig.from_settings(**params))
    if name == BackendName.PATCH_MATCH:
        return PatchMatchBackend(
            patch=params.get('patch', defaults['PATCH']),
            search=params.get('search', defaults['SEARCH']),
            ssd_ceiling=params.get('ssd_ceiling', defaults['SSD_CEILING']),
        )
    return KeypointBackend(
        nms_radius=params.get('nms_radius', defaults['NMS_RADIUS']),
        max_keypoints=params.get('max_keypoints', defaults['MAX_KEYPOINTS']),
        descriptor_half=params.get('descriptor_half', defaults['DESCRIPTOR_HALF']),
        min_score=params.get('min_score', defaults['MIN_MATCH_SCORE']),
    )
