"""
Demonstration graphs.

Nodes are demonstration parts plus the reserved ``LIVE`` and ``GOAL`` nodes. The edge A→B scores
how well part B can take over where part A ends: B's first keyframe (with its foreground mask) is
compared against A's last frame. Query nodes are attached to a built graph as a derived copy, the
built graph itself is never modified.
"""
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from django.db import models

from core.exceptions import EmptyBank
from demobank.parts import first_keyframe, last_frame, last_keyframe
from similarity.scorer import Scorer
from similarity.scores import ScoreKind, SimilarityResult

logger = logging.getLogger(__name__)

LIVE = '__live__'
GOAL = '__goal__'
RESERVED = (LIVE, GOAL)


class CombinationMode(models.TextChoices):
    MULTIPLICATIVE = 'multiplicative', 'Multiplicative'
    INVERTED_SUM = 'inverted_sum', 'Inverted sum'


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = CombinationMode.MULTIPLICATIVE
    stage_filter: bool = True
    # None derives the flow-score temperature from the median raw edge distance
    temperature: float = None
    cost_cap: float = 40.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'mode', CombinationMode(self.mode))
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError('temperature must be positive')
        if self.cost_cap <= 0:
            raise ValueError('cost_cap must be positive')
        if self.workers < 1:
            raise ValueError('workers must be at least 1')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        values = {
            'mode': settings.PLANNER['MODE'],
            'stage_filter': settings.PLANNER['STAGE_FILTER'],
            'temperature': settings.PLANNER['TEMPERATURE'],
            'cost_cap': settings.PLANNER['COST_CAP'],
            'workers': settings.PLANNER['WORKERS'],
        }
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class PartNode:
    part_id: str
    stage_index: int
    stage_count: int = 1

    def __post_init__(self):
        if self.part_id in RESERVED:
            raise ValueError(f'{self.part_id} is a reserved node name')
        if not 0 <= self.stage_index < self.stage_count:
            raise ValueError(f'node {self.part_id} has stage {self.stage_index} of {self.stage_count}')

    @property
    def is_terminal(self):
        return self.stage_index == self.stage_count - 1

    @classmethod
    def of(cls, part):
        return cls(part.part_id, part.stage_index, part.stage_count)


def stages_compatible(source, target):
    return target.stage_count == source.stage_count and target.stage_index == source.stage_index + 1


@dataclass(frozen=True)
class DemoGraph:
    """
    Immutable scored graph over demonstration parts.

    ``edges`` maps ``(source, target)`` to a ``SimilarityResult``. ``entry_stage`` is the lowest stage
    a plan may still use; it rises as parts are executed. ``bank`` and ``scorer`` are kept so query
    nodes can be scored the same way the part edges were.
    """
    nodes: tuple
    edges: dict
    mode: str = CombinationMode.MULTIPLICATIVE
    temperature: float = 1.0
    stage_filter: bool = True
    cost_cap: float = 40.0
    entry_stage: int = 0
    bank: object = field(default=None, compare=False, repr=False)
    scorer: object = field(default=None, compare=False, repr=False)

    __hash__ = None

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'edges', dict(self.edges))
        object.__setattr__(self, 'mode', CombinationMode(self.mode))
        ids = [node.part_id for node in self.nodes]
        if len(ids) != len(set(ids)):
            raise ValueError('part ids must be unique')
        known = set(ids)
        for (source, target), result in self.edges.items():
            if target == LIVE:
                raise ValueError('no edge may enter LIVE')
            if source == GOAL:
                raise ValueError('no edge may leave GOAL')
            if source not in known | {LIVE} or target not in known | {GOAL}:
                raise ValueError(f'edge {source}->{target} names an unknown node')
            if source == target:
                raise ValueError(f'self loop on {source}')
            if not 0 < result.normalized <= 1:
                raise ValueError(f'edge {source}->{target} has weight {result.normalized} outside (0, 1]')

    def node(self, part_id):
        return next(node for node in self.nodes if node.part_id == part_id)

    def successors(self, source):
        return sorted(target for (start, target) in self.edges if start == source)

    @property
    def part_edges(self):
        return {key: value for key, value in self.edges.items() if LIVE not in key and GOAL not in key}

    def without(self, endpoint):
        """Copy of the graph without the edges touching ``endpoint`` (``LIVE`` or ``GOAL``)."""
        return replace(self, edges={key: value for key, value in self.edges.items() if endpoint not in key})

    @property
    def has_goal(self):
        return any(target == GOAL for (_, target) in self.edges)


def candidate_pairs(nodes, stage_filter=True):
    for source in nodes:
        for target in nodes:
            if source.part_id == target.part_id:
                continue
            if stage_filter and not stages_compatible(source, target):
                continue
            yield source, target


def _edge_temperature(kind, raws, fallback):
    if kind != ScoreKind.FS:
        return fallback
    finite = [raw for raw in raws if raw != float('inf')]
    if not finite:
        return fallback
    median = statistics.median(finite)
    return median if median > 0 else fallback


def build_graph(bank, scorer=None, config=None):
    """
    Score every stage-compatible ordered pair of parts in ``bank``.

    With the stage filter on, an edge joins A to B only when B is the next stage of a demonstration
    cut the same way as A's; with it off the graph is complete.
    """
    config = config or PlannerConfig.from_settings()
    scorer = scorer or Scorer()
    if len(bank) == 0:
        raise EmptyBank()

    parts = {part.part_id: part for part in bank}
    nodes = tuple(PartNode.of(part) for part in bank)
    pairs = [(source.part_id, target.part_id) for source, target in candidate_pairs(nodes, config.stage_filter)]

    def score(pair):
        source, target = parts[pair[0]], parts[pair[1]]
        return scorer.score(first_keyframe(target), last_frame(source), last_keyframe(source).objects)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(score, pairs))
    else:
        results = [score(pair) for pair in pairs]

    temperature = config.temperature or _edge_temperature(
        scorer.kind, [result.raw for result in results], scorer.config.temperature)
    edges = {pair: scorer.renormalized(result, temperature) for pair, result in zip(pairs, results)}
    logger.debug('built graph over %d parts with %d edges (tau %.4g)', len(nodes), len(edges), temperature)
    return DemoGraph(nodes, edges, config.mode, temperature, config.stage_filter, config.cost_cap,
                     bank=bank, scorer=scorer)


def _unconditioned(scorer):
    best_raw = 0.0 if scorer.kind == ScoreKind.FS else scorer.cap()
    return SimilarityResult(best_raw, 1.0, scorer.kind)


def attach_live(graph, live, live_objects=(), entry_stage=0):
    """Re-attach ``LIVE`` at ``live``; parts below ``entry_stage`` stop being reachable."""
    graph = replace(graph.without(LIVE), entry_stage=entry_stage)
    parts = {part.part_id: part for part in graph.bank}
    edges = dict(graph.edges)
    for node in graph.nodes:
        eligible = node.stage_index == entry_stage if graph.stage_filter else node.stage_index >= entry_stage
        if eligible:
            result = graph.scorer.score(first_keyframe(parts[node.part_id]), live, live_objects)
            edges[(LIVE, node.part_id)] = graph.scorer.renormalized(result, graph.temperature)
    return replace(graph, edges=edges)


def attach_goal(graph, goal=None, goal_objects=()):
    """
    Attach ``GOAL`` behind every terminal part.

    Without a goal frame every terminal edge gets weight 1 and the plan only depends on the live side.
    """
    graph = graph.without(GOAL)
    parts = {part.part_id: part for part in graph.bank}
    edges = dict(graph.edges)
    for node in graph.nodes:
        if not node.is_terminal:
            continue
        if goal is None:
            edges[(node.part_id, GOAL)] = _unconditioned(graph.scorer)
        else:
            # the goal plays the live side against the part's final keyframe and its mask
            result = graph.scorer.score(last_keyframe(parts[node.part_id]), goal, goal_objects)
            edges[(node.part_id, GOAL)] = graph.scorer.renormalized(result, graph.temperature)
    return replace(graph, edges=edges)


def attach_queries(graph, live, live_objects=(), goal=None, goal_objects=(), entry_stage=0):
    if graph.bank is None or graph.scorer is None:
        raise ValueError('query nodes need a graph built from a bank')
    return attach_goal(attach_live(graph, live, live_objects, entry_stage), goal, goal_objects)
