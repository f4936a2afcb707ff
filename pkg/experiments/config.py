import logging
from dataclasses import dataclass, field, replace

from django.db import models

from correspondence.backends import BackendName, make_backend
from demobank.parts import Scheme
from planner.graph import CombinationMode, PlannerConfig
from servo.control import ServoConfig
from similarity.scorer import Scorer, SimilarityConfig
from similarity.scores import ScoreKind
from simulator.shapes import GRASPABLE, Shape
from simulator.world import SceneConfig, TaskKind, make_task

logger = logging.getLogger(__name__)

# demo seeds of different task blocks never collide below this many demos per block
SEED_BLOCK = 10000
# flow range of the short-range estimator the multi-part and cross-task suites model
LIMITED_FLOW_PX = 16.0


class Suite(models.TextChoices):
    MULTIPART = 'multipart', 'Multi-part demonstrations'
    GOAL = 'goal', 'Goal-conditioned search'
    CROSSTASK = 'crosstask', 'Cross-task graphs'
    SIMILARITY = 'eval_sim', 'Similarity ranking errors'
    NEXT_ACTION = 'next_action', 'Next-action errors'
    STAGE_TABLE = 'stage_table', 'Stage success per score'


SUITE_DEFAULTS = {
    Suite.MULTIPART: {
        'task_kind': TaskKind.SHAPE_SORTING,
        'target_shapes': (Shape.TRAPEZE,),
        'demo_counts': (5, 10, 20),
        'schemes': (Scheme.P1, Scheme.P2, Scheme.P3),
        'combination_mode': CombinationMode.MULTIPLICATIVE,
        'goal_conditioning': False,
        'backend_params': {'noise_px': 1.0, 'max_flow_px': LIMITED_FLOW_PX},
    },
    Suite.GOAL: {
        'task_kind': TaskKind.PICK_AND_PLACE,
        'target_shapes': (Shape.TRAPEZE, Shape.OVAL),
        'demo_counts': (20,),
        'schemes': (Scheme.P3,),
        'combination_mode': CombinationMode.MULTIPLICATIVE,
        'goal_conditioning': True,
    },
    Suite.CROSSTASK: {
        'task_kind': TaskKind.PICK_AND_PLACE,
        'target_shapes': (Shape.TRAPEZE,),
        'demo_counts': (0, 5, 10, 20),
        'schemes': (Scheme.P3,),
        'combination_mode': CombinationMode.INVERTED_SUM,
        'goal_conditioning': True,
        'backend_params': {'max_flow_px': LIMITED_FLOW_PX},
    },
    Suite.SIMILARITY: {
        'task_kind': TaskKind.SHAPE_SORTING,
        'target_shapes': (Shape.TRAPEZE,),
        'demo_counts': (30,),
        'schemes': (Scheme.P1,),
        'episodes': 100,
        'score_kinds': (ScoreKind.FS, ScoreKind.INLIER_COUNT, ScoreKind.EMBEDDING),
    },
    Suite.NEXT_ACTION: {
        'task_kind': TaskKind.SHAPE_SORTING,
        'target_shapes': (Shape.TRAPEZE,),
        'demo_counts': (30,),
        'schemes': (Scheme.P1,),
        'episodes': 30,
        'score_kinds': (ScoreKind.FS, ScoreKind.INLIER_COUNT, ScoreKind.EMBEDDING),
    },
    Suite.STAGE_TABLE: {
        'task_kind': TaskKind.SHAPE_SORTING,
        'target_shapes': (Shape.TRAPEZE,),
        'demo_counts': (20,),
        'schemes': (Scheme.P1, Scheme.P3),
        'episodes': 20,
        'score_kinds': (ScoreKind.FS, ScoreKind.INLIER_COUNT),
        'backend_params': {'noise_px': 1.0, 'max_flow_px': LIMITED_FLOW_PX},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one experiment suite run depends on.

    Episode ``i`` of every cell starts from seed ``base_seed + i`` so cells are paired; demonstrations
    are recorded from ``base_seed + demo_seed_offset`` onwards and never share a seed with an episode.
    For the cross-task suite ``demo_counts`` counts the shape-sorting demonstrations added to the
    single pick-and-place one, so zero is allowed there.
    """
    suite: str
    task_kind: str = TaskKind.SHAPE_SORTING
    target_shapes: tuple = (Shape.TRAPEZE,)
    demo_counts: tuple = (5,)
    schemes: tuple = (Scheme.P3,)
    score_kind: str = ScoreKind.FS
    # suites comparing scores rank or plan with each of these; the others use score_kind only
    score_kinds: tuple = (ScoreKind.FS,)
    combination_mode: str = CombinationMode.MULTIPLICATIVE
    goal_conditioning: bool = False
    episodes: int = 50
    base_seed: int = 1000
    demo_seed_offset: int = 100000
    workers: int = 1
    backend: str = BackendName.ORACLE
    backend_params: dict = field(default_factory=dict)
    servo: ServoConfig = field(default_factory=ServoConfig)
    scene: SceneConfig = None
    output_dir: str = 'results'

    def __post_init__(self):
        object.__setattr__(self, 'suite', Suite(self.suite))
        object.__setattr__(self, 'task_kind', TaskKind(self.task_kind))
        object.__setattr__(self, 'target_shapes', tuple(Shape(s) for s in self.target_shapes))
        object.__setattr__(self, 'demo_counts', tuple(int(n) for n in self.demo_counts))
        object.__setattr__(self, 'schemes', tuple(Scheme(s) for s in self.schemes))
        object.__setattr__(self, 'score_kind', ScoreKind(self.score_kind))
        object.__setattr__(self, 'score_kinds', tuple(ScoreKind(k) for k in self.score_kinds))
        object.__setattr__(self, 'combination_mode', CombinationMode(self.combination_mode))
        object.__setattr__(self, 'backend', BackendName(self.backend))
        object.__setattr__(self, 'backend_params', dict(self.backend_params))

        if self.episodes < 1:
            raise ValueError('episodes must be at least 1')
        if not self.demo_counts or not self.schemes or not self.target_shapes or not self.score_kinds:
            raise ValueError('demo_counts, schemes, target_shapes and score_kinds must not be empty')
        least = 0 if self.suite == Suite.CROSSTASK else 1
        if min(self.demo_counts) < least:
            raise ValueError(f'demo counts must be at least {least}')
        if any(shape not in GRASPABLE for shape in self.target_shapes):
            raise ValueError('target shapes must be graspable')
        if self.workers < 1:
            raise ValueError('workers must be at least 1')
        if self.demo_seed_offset < self.episodes:
            raise ValueError('demo_seed_offset must exceed the episode count')

    @classmethod
    def from_settings(cls, suite, **overrides):
        from django.conf import settings

        suite = Suite(suite)
        values = {
            'suite': suite,
            'episodes': settings.EXPERIMENTS['EPISODES'],
            'base_seed': settings.EXPERIMENTS['BASE_SEED'],
            'demo_seed_offset': settings.EXPERIMENTS['DEMO_SEED_OFFSET'],
            'output_dir': settings.EXPERIMENTS['OUTPUT_DIR'],
            'score_kind': settings.SIMILARITY['KIND'],
            'backend': settings.CORRESPONDENCE['BACKEND'],
            'servo': ServoConfig.from_settings(),
            'scene': SceneConfig.from_settings(),
        }
        values.update(SUITE_DEFAULTS[suite])
        values.update(overrides)
        return cls(**values)

    @property
    def scene_config(self):
        return self.scene or SceneConfig.from_settings()

    def with_overrides(self, **overrides):
        return replace(self, **{name: value for name, value in overrides.items() if value is not None})

    def task(self, target_shape=None, kind=None):
        return make_task(kind or self.task_kind, target_shape or self.target_shapes[0], self.scene_config)

    def episode_seeds(self):
        return [self.base_seed + index for index in range(self.episodes)]

    def demo_seed(self, index, block=0):
        return self.base_seed + self.demo_seed_offset + block * SEED_BLOCK + index

    def held_out_seed(self, block=0):
        """Seed of the demonstration whose final frame serves as the goal image."""
        return self.demo_seed(SEED_BLOCK - 1, block)

    def make_backend(self):
        return make_backend(self.backend, **self.backend_params)

    def scorer(self, kind=None):
        return Scorer(SimilarityConfig.from_settings(kind=kind or self.score_kind), self.make_backend(),
                      self.servo.ransac)

    def planner_config(self):
        return PlannerConfig.from_settings(mode=self.combination_mode)
