import logging
from dataclasses import dataclass

from core.exceptions import EmptyMask, StateMismatch, ZeroVector
from correspondence.backends import make_backend
from pose.estimation import RansacConfig
from similarity.embedding import embedding_similarity, make_embedder
from similarity.scores import ScoreKind, SimilarityResult, inlier_similarity, normalize, orientation, sim_fs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityConfig:
    kind: str = ScoreKind.FS
    k: float = 0.5
    temperature: float = 1.0
    inlier_cap: float = 200.0
    embedding_cap: float = 1.0
    epsilon: float = 1e-12
    # normalized score is multiplied by valid_pixel_fraction ** coverage_power; 0 disables it
    coverage_power: float = 0.0
    embedder: str = 'histogram'

    def __post_init__(self):
        object.__setattr__(self, 'kind', ScoreKind(self.kind))
        if self.temperature <= 0 or self.inlier_cap <= 0 or self.embedding_cap <= 0:
            raise ValueError('temperature and caps must be positive')
        if not 0 < self.epsilon < 1:
            raise ValueError('epsilon must lie in (0, 1)')
        if self.k < 0 or self.coverage_power < 0:
            raise ValueError('k and coverage_power must be non-negative')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        values = {
            'kind': settings.SIMILARITY['KIND'],
            'k': settings.SIMILARITY['K'],
            'temperature': settings.SIMILARITY['TEMPERATURE'],
            'inlier_cap': settings.SIMILARITY['INLIER_CAP'],
            'embedding_cap': settings.SIMILARITY['EMBEDDING_CAP'],
            'epsilon': settings.SIMILARITY['EPSILON'],
            'coverage_power': settings.SIMILARITY['COVERAGE_POWER'],
            'embedder': settings.SIMILARITY['EMBEDDER'],
        }
        values.update(overrides)
        return cls(**values)


class Scorer:
    """
    Scores a demonstration keyframe against a live frame with one configured score kind.

    Failures that would make a candidate incomparable fold to the worst score of the kind
    (infinite distance, zero similarity) so rankings stay total.
    """

    def __init__(self, config=None, backend=None, ransac=None, embedder=None):
        self.config = config or SimilarityConfig.from_settings()
        self.backend = backend or make_backend()
        self.ransac = ransac or RansacConfig.from_settings()
        self.embedder = embedder or make_embedder(self.config.embedder)
        if self.config.kind == ScoreKind.FS and not self.backend.dense:
            raise ValueError('the flow score needs a dense flow backend')

    @property
    def kind(self):
        return self.config.kind

    @property
    def orientation(self):
        return orientation(self.kind)

    def cap(self, kind=None):
        kind = ScoreKind(kind or self.kind)
        if kind == ScoreKind.INLIER_COUNT:
            return self.config.inlier_cap
        return self.config.embedding_cap

    def normalize(self, raw, temperature=None, valid_pixel_fraction=1.0):
        value = normalize(raw, self.kind, temperature or self.config.temperature, self.cap(), self.config.epsilon)
        if self.config.coverage_power > 0:
            value = max(self.config.epsilon, value * valid_pixel_fraction ** self.config.coverage_power)
        return value

    def renormalized(self, result, temperature):
        """The same raw score under another temperature."""
        return SimilarityResult(result.raw, self.normalize(result.raw, temperature, result.valid_pixel_fraction),
                                result.kind, result.valid_pixel_fraction, result.fit)

    def worst(self):
        raw = float('inf') if self.kind == ScoreKind.FS else 0.0
        return SimilarityResult(raw, self.config.epsilon, self.kind, 0.0)

    def score(self, keyframe, live, live_objects=()):
        """Compare ``keyframe`` (the demonstration side, with its mask) against the whole ``live`` frame."""
        return self.score_frames(keyframe.frame, keyframe.foreground_mask, live, keyframe.objects, live_objects)

    def score_frames(self, demo, mask, live, demo_objects=(), live_objects=()):
        config = self.config
        try:
            if config.kind == ScoreKind.FS:
                flow = self.backend.correspond(demo, live, mask, demo_objects, live_objects)
                result = sim_fs(demo, live, mask, flow, config.k, config.temperature)
            elif config.kind == ScoreKind.INLIER_COUNT:
                matcher = self.backend if not self.backend.dense else None
                result = inlier_similarity(demo, live, mask, self.ransac, matcher, demo_objects, live_objects,
                                           config.inlier_cap)
            else:
                result = embedding_similarity(demo, live, mask, self.embedder, cap=config.embedding_cap)
        except (EmptyMask, ZeroVector, StateMismatch) as exc:
            logger.warning('%s score folded to the worst value: %s', config.kind.value, exc)
            return self.worst()
        return self.renormalized(result, config.temperature)
