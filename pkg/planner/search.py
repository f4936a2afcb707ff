"""
Minimum-cost traversal of an attached demonstration graph.

Multiplicative mode maximises the product of normalized edge scores by minimising the summed
``-ln(score)`` (capped at ``cost_cap``); inverted-sum mode minimises the summed ``1 / score``.
Labels carry the part sequence next to the cost so ties resolve to the lexicographically smallest
sequence of part ids.
"""
import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.exceptions import NoPath
from planner.graph import GOAL, LIVE, CombinationMode, attach_live

logger = logging.getLogger(__name__)


def edge_cost(normalized, mode, cost_cap=40.0):
    if CombinationMode(mode) == CombinationMode.MULTIPLICATIVE:
        return min(-math.log(normalized), cost_cap)
    return 1.0 / normalized


def combine(per_edge_scores, mode):
    """Product of the scores, or the sum of their inverses in inverted-sum mode."""
    if CombinationMode(mode) == CombinationMode.MULTIPLICATIVE:
        return math.prod(per_edge_scores)
    return sum(1.0 / score for score in per_edge_scores)


@dataclass(frozen=True)
class Plan:
    path: tuple
    combined_score: float
    per_edge_scores: tuple
    mode: str = CombinationMode.MULTIPLICATIVE
    cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'path', tuple(self.path))
        object.__setattr__(self, 'per_edge_scores', tuple(self.per_edge_scores))
        object.__setattr__(self, 'mode', CombinationMode(self.mode))
        if not self.path:
            raise ValueError('a plan visits at least one part')
        if len(self.per_edge_scores) != len(self.path) + 1:
            raise ValueError('a plan has one score per edge, LIVE and GOAL edges included')

    @classmethod
    def along(cls, graph, path, cost=None):
        nodes = (LIVE,) + tuple(path) + (GOAL,)
        scores = tuple(graph.edges[(a, b)].normalized for a, b in zip(nodes, nodes[1:]))
        if cost is None:
            cost = path_cost(graph, path)
        return cls(tuple(path), combine(scores, graph.mode), scores, graph.mode, cost)


def path_cost(graph, path):
    nodes = (LIVE,) + tuple(path) + (GOAL,)
    cost = 0.0
    for a, b in zip(nodes, nodes[1:]):
        cost += edge_cost(graph.edges[(a, b)].normalized, graph.mode, graph.cost_cap)
    return cost


def _adjacency(graph):
    allowed = {node.part_id for node in graph.nodes if node.stage_index >= graph.entry_stage}
    adjacency = {}
    for (source, target), result in graph.edges.items():
        if source != LIVE and source not in allowed:
            continue
        if target != GOAL and target not in allowed:
            continue
        adjacency.setdefault(source, []).append((target, edge_cost(result.normalized, graph.mode, graph.cost_cap)))
    return adjacency


def shortest_path(graph):
    """Cheapest LIVE→GOAL path over parts at or above the graph's entry stage."""
    adjacency = _adjacency(graph)
    queue = [(0.0, (), LIVE)]
    settled = set()
    while queue:
        cost, path, node = heapq.heappop(queue)
        if node in settled:
            continue
        settled.add(node)
        if node == GOAL:
            plan = Plan.along(graph, path, cost)
            logger.debug('planned %s (combined %.4g)', ' -> '.join(plan.path), plan.combined_score)
            return plan
        for target, step in adjacency.get(node, ()):
            if target in settled:
                continue
            extended = path if target == GOAL else path + (target,)
            heapq.heappush(queue, (cost + step, extended, target))
    raise NoPath(f'GOAL is unreachable from LIVE over {len(graph.nodes)} parts.')


def executed_entry_stage(graph, executed):
    stages = [graph.node(part_id).stage_index for part_id in executed]
    return max(stages) + 1 if stages else 0


def replan(graph, new_live, executed=(), live_objects=()):
    """Plan again from ``new_live`` over the stages after the last executed part."""
    entry_stage = executed_entry_stage(graph, executed)
    return shortest_path(attach_live(graph, new_live, live_objects, entry_stage))


def random_plan(graph, seed=0):
    """Uniformly random walk from LIVE to GOAL, one successor at a time."""
    rng = np.random.default_rng(seed)
    adjacency = _adjacency(graph)

    reaches_goal = {GOAL}
    changed = True
    while changed:
        changed = False
        for source, targets in adjacency.items():
            if source not in reaches_goal and any(target in reaches_goal for target, _ in targets):
                reaches_goal.add(source)
                changed = True

    path, node = [], LIVE
    while node != GOAL:
        options = sorted(target for target, _ in adjacency.get(node, ())
                         if target in reaches_goal and target not in path)
        if not options:
            raise NoPath(f'No random continuation from {node}.')
        node = options[int(rng.integers(len(options)))]
        if node != GOAL:
            path.append(node)
    return Plan.along(graph, path)
