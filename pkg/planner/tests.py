import math

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers

from core.exceptions import EmptyBank, NoPath
from demobank.parts import MemoryBank, Scheme, build_bank, first_frame, first_keyframe, last_frame
from planner.graph import (
    GOAL, LIVE, CombinationMode, DemoGraph, PartNode, PlannerConfig, attach_goal, attach_queries, build_graph,
    candidate_pairs,
)
from planner.search import Plan, edge_cost, random_plan, replan, shortest_path
from planner.serializers import dump_graph, load_graph
from similarity.scorer import Scorer
from similarity.scores import ScoreKind, SimilarityResult
from simulator.scripted import scripted_demo
from simulator.shapes import Shape
from simulator.world import SceneConfig, TaskKind, make_task


def weight(value, raw=0.0):
    return SimilarityResult(raw, value, ScoreKind.FS)


def random_graph(rng, mode, stage_filter, max_parts=8):
    nodes = tuple(PartNode(f'p{index}', int(rng.integers(0, 3)), 3)
                  for index in range(int(rng.integers(1, max_parts + 1))))
    edges = {}
    for source, target in candidate_pairs(nodes, stage_filter):
        if rng.uniform() < 0.8:
            edges[(source.part_id, target.part_id)] = weight(float(rng.uniform(0.01, 1.0)))
    for node in nodes:
        if (node.stage_index == 0 or not stage_filter) and rng.uniform() < 0.9:
            edges[(LIVE, node.part_id)] = weight(float(rng.uniform(0.01, 1.0)))
        if node.is_terminal and rng.uniform() < 0.9:
            edges[(node.part_id, GOAL)] = weight(float(rng.uniform(0.01, 1.0)))
    return DemoGraph(nodes, edges, mode, stage_filter=stage_filter)


def enumerate_best(graph):
    """Exhaustive search over simple LIVE→GOAL paths; None when GOAL is unreachable."""
    best = None

    def cost_of(value):
        if graph.mode == CombinationMode.MULTIPLICATIVE:
            return min(-math.log(value), graph.cost_cap)
        return 1.0 / value

    def visit(node, path, cost):
        nonlocal best
        for (source, target), result in sorted(graph.edges.items()):
            if source != node:
                continue
            total = cost + cost_of(result.normalized)
            if target == GOAL:
                if best is None or (total, path) < best:
                    best = (total, path)
            elif target not in path:
                visit(target, path + (target,), total)

    visit(LIVE, (), 0.0)
    return best


def chain_graph(value=0.5, mode=CombinationMode.MULTIPLICATIVE):
    """Two demos cut into three parts each, every edge weighted ``value``."""
    nodes = tuple(PartNode(f'{demo}{stage}', stage, 3) for demo in 'ab' for stage in range(3))
    edges = {(s.part_id, t.part_id): weight(value) for s, t in candidate_pairs(nodes)}
    edges.update({(LIVE, f'{demo}0'): weight(value) for demo in 'ab'})
    edges.update({(f'{demo}2', GOAL): weight(value) for demo in 'ab'})
    return DemoGraph(nodes, edges, mode)


class EdgeCostTests(SimpleTestCase):
    def test_costs(self):
        self.assertEqual(edge_cost(1.0, CombinationMode.MULTIPLICATIVE), 0.0)
        self.assertAlmostEqual(edge_cost(0.5, CombinationMode.MULTIPLICATIVE), math.log(2))
        self.assertEqual(edge_cost(1e-30, CombinationMode.MULTIPLICATIVE, cost_cap=40.0), 40.0)
        self.assertEqual(edge_cost(0.25, CombinationMode.INVERTED_SUM), 4.0)


class GraphTests(SimpleTestCase):
    def test_invariants(self):
        node = PartNode('p', 0, 1)
        with self.assertRaises(ValueError):
            DemoGraph((node,), {('p', LIVE): weight(0.5)})
        with self.assertRaises(ValueError):
            DemoGraph((node,), {(GOAL, 'p'): weight(0.5)})
        with self.assertRaises(ValueError):
            DemoGraph((node,), {(LIVE, 'q'): weight(0.5)})
        with self.assertRaises(ValueError):
            PartNode(LIVE, 0, 1)

    def test_stage_filter_edge_count(self):
        nodes = tuple(PartNode(f'{demo}{stage}', stage, 3) for demo in 'ab' for stage in range(3))
        self.assertEqual(len(list(candidate_pairs(nodes))), 8)
        self.assertEqual(len(list(candidate_pairs(nodes, stage_filter=False))), 30)

    def test_schemes_do_not_mix(self):
        nodes = (PartNode('x0', 0, 3), PartNode('y1', 1, 2))
        self.assertEqual(list(candidate_pairs(nodes)), [])


class ShortestPathTests(SimpleTestCase):
    def test_single_part(self):
        graph = DemoGraph((PartNode('p', 0, 1),), {(LIVE, 'p'): weight(0.9), ('p', GOAL): weight(0.8)})
        plan = shortest_path(graph)
        self.assertEqual(plan.path, ('p',))
        self.assertAlmostEqual(plan.combined_score, 0.72)
        self.assertEqual(plan.per_edge_scores, (0.9, 0.8))

    def test_inverted_sum_combines_distances(self):
        graph = DemoGraph((PartNode('p', 0, 1),), {(LIVE, 'p'): weight(0.5), ('p', GOAL): weight(0.25)},
                          CombinationMode.INVERTED_SUM)
        self.assertEqual(shortest_path(graph).combined_score, 6.0)

    def test_modes_can_disagree(self):
        # a wins the product once its weak edge rises to 0.12, but its inverse sum stays larger
        nodes = (PartNode('a', 0, 1), PartNode('b', 0, 1))
        edges = {(LIVE, 'a'): weight(0.9), ('a', GOAL): weight(0.05), (LIVE, 'b'): weight(0.3), ('b', GOAL): weight(0.3)}
        for mode in CombinationMode:
            self.assertEqual(shortest_path(DemoGraph(nodes, edges, mode)).path, ('b',))
        edges[(LIVE, 'a')] = weight(0.99)
        edges[('a', GOAL)] = weight(0.12)
        self.assertEqual(shortest_path(DemoGraph(nodes, edges, CombinationMode.MULTIPLICATIVE)).path, ('a',))
        self.assertEqual(shortest_path(DemoGraph(nodes, edges, CombinationMode.INVERTED_SUM)).path, ('b',))

    def test_ties_break_lexicographically(self):
        for mode in CombinationMode:
            self.assertEqual(shortest_path(chain_graph(0.5, mode)).path, ('a0', 'a1', 'a2'))

    def test_no_terminal_part(self):
        graph = DemoGraph((PartNode('p', 0, 3),), {(LIVE, 'p'): weight(0.9)})
        with self.assertRaises(NoPath):
            shortest_path(graph)

    def test_entry_stage_excludes_earlier_parts(self):
        graph = DemoGraph(chain_graph().nodes, {**chain_graph().edges, (LIVE, 'b1'): weight(0.5)}, entry_stage=1)
        self.assertEqual(shortest_path(graph).path, ('b1', 'a2'))

    def test_matches_enumeration_with_stage_filter(self):
        rng = np.random.default_rng(11)
        for mode in CombinationMode:
            for _ in range(200):
                graph = random_graph(rng, mode, stage_filter=True)
                self.assert_matches_enumeration(graph)

    def test_matches_enumeration_on_complete_graphs(self):
        rng = np.random.default_rng(12)
        for mode in CombinationMode:
            for _ in range(100):
                graph = random_graph(rng, mode, stage_filter=False, max_parts=6)
                self.assert_matches_enumeration(graph)

    def assert_matches_enumeration(self, graph):
        best = enumerate_best(graph)
        if best is None:
            with self.assertRaises(NoPath):
                shortest_path(graph)
            return
        plan = shortest_path(graph)
        self.assertEqual(plan.path, best[1])
        self.assertEqual(plan.cost, best[0])

    def test_scaling_scores_keeps_the_path(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            graph = random_graph(rng, CombinationMode.MULTIPLICATIVE, stage_filter=True)
            try:
                expected = shortest_path(graph).path
            except NoPath:
                continue
            scaled = DemoGraph(graph.nodes, {key: weight(value.normalized * 0.3) for key, value in graph.edges.items()})
            self.assertEqual(shortest_path(scaled).path, expected)

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        graph = random_graph(rng, CombinationMode.MULTIPLICATIVE, stage_filter=True)
        copy = DemoGraph(graph.nodes, dict(reversed(list(graph.edges.items()))), graph.mode)
        try:
            self.assertEqual(shortest_path(graph), shortest_path(copy))
        except NoPath:
            with self.assertRaises(NoPath):
                shortest_path(copy)

    def test_plan_needs_a_part(self):
        with self.assertRaises(ValueError):
            Plan((), 1.0, (1.0,))


class RandomPlanTests(SimpleTestCase):
    def test_follows_edges(self):
        graph = chain_graph()
        plans = {random_plan(graph, seed).path for seed in range(20)}
        self.assertGreater(len(plans), 1)
        for path in plans:
            self.assertEqual([graph.node(part_id).stage_index for part_id in path], [0, 1, 2])

    def test_seeded(self):
        graph = chain_graph()
        self.assertEqual(random_plan(graph, 5), random_plan(graph, 5))

    def test_unreachable(self):
        with self.assertRaises(NoPath):
            random_plan(DemoGraph((PartNode('p', 0, 3),), {(LIVE, 'p'): weight(0.9)}))


class GraphDumpTests(SimpleTestCase):
    def test_round_trip(self):
        rng = np.random.default_rng(15)
        for mode in CombinationMode:
            graph = random_graph(rng, mode, stage_filter=True)
            edges = dict(graph.edges)
            if edges:
                key = next(iter(edges))
                edges[key] = SimilarityResult(float('inf'), 1e-12, ScoreKind.FS, 0.0)
            graph = DemoGraph(graph.nodes, edges, mode, temperature=0.37)
            self.assertEqual(load_graph(dump_graph(graph)), graph)

    def test_rejects_unknown_nodes(self):
        content = dump_graph(chain_graph()).replace(b'"a0"', b'"c0"', 1)
        with self.assertRaises(serializers.ValidationError):
            load_graph(content)


class BankGraphTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        config = SceneConfig.from_settings()
        task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, config)
        cls.bank = build_bank([scripted_demo(task, seed, config) for seed in (1, 2)], Scheme.P3)
        cls.scorer = Scorer()
        cls.graph = build_graph(cls.bank, cls.scorer, PlannerConfig.from_settings())

    def start(self):
        part = self.bank.parts[0]
        return first_frame(part), first_keyframe(part).objects

    def attached_at_start(self):
        return attach_queries(self.graph, *self.start())

    def test_edges(self):
        self.assertEqual(len(self.graph.edges), 8)
        self.assertGreater(self.graph.temperature, 0)
        self.assertTrue(all(0 < result.normalized <= 1 for result in self.graph.edges.values()))
        complete = build_graph(self.bank, self.scorer, PlannerConfig.from_settings(stage_filter=False))
        self.assertEqual(len(complete.edges), 30)

    def test_empty_bank(self):
        with self.assertRaises(EmptyBank):
            build_graph(MemoryBank(), self.scorer)

    def test_live_self_match_ranks_first(self):
        part = self.bank.parts[3]
        attached = attach_queries(self.graph, first_frame(part), first_keyframe(part).objects)
        live_edges = {target: result.normalized for (source, target), result in attached.edges.items() if source == LIVE}
        self.assertEqual(set(live_edges), {p.part_id for p in self.bank if p.stage_index == 0})
        self.assertEqual(live_edges[part.part_id], max(live_edges.values()))
        self.assertEqual(live_edges[part.part_id], 1.0)

    def test_goal_self_match_ranks_first(self):
        part = self.bank.parts[2]
        attached = attach_queries(self.graph, first_frame(self.bank.parts[0]),
                                  goal=last_frame(part), goal_objects=part.keyframes[-1].objects)
        goal_edges = {source: result.normalized for (source, target), result in attached.edges.items() if target == GOAL}
        self.assertEqual(set(goal_edges), {p.part_id for p in self.bank if p.is_terminal})
        self.assertEqual(goal_edges[part.part_id], max(goal_edges.values()))

    def test_absent_goal_weighs_one(self):
        attached = attach_goal(self.graph)
        self.assertEqual({result.normalized for (_, target), result in attached.edges.items() if target == GOAL}, {1.0})
        self.assertFalse(self.graph.has_goal)

    def test_plan_and_replan(self):
        live = first_frame(self.bank.parts[0])
        attached = attach_queries(self.graph, live, first_keyframe(self.bank.parts[0]).objects)
        plan = shortest_path(attached)
        self.assertEqual([self.graph.node(p).stage_index for p in plan.path], [0, 1, 2])
        self.assertEqual(replan(attached, live, (), first_keyframe(self.bank.parts[0]).objects), plan)

        follow_up = self.bank.parts[1]
        replanned = replan(attached, first_frame(follow_up), (plan.path[0],), first_keyframe(follow_up).objects)
        self.assertTrue(all(self.graph.node(p).stage_index >= 1 for p in replanned.path))
        live_edges = {target: result.normalized for (source, target), result in
                      attach_queries(self.graph, first_frame(follow_up), first_keyframe(follow_up).objects,
                                     entry_stage=1).edges.items() if source == LIVE}
        self.assertEqual(live_edges[follow_up.part_id], 1.0)

    def test_replan_after_terminal_part(self):
        attached = self.attached_at_start()
        with self.assertRaises(NoPath):
            replan(attached, self.start()[0], (self.bank.parts[2].part_id,), self.start()[1])

    def test_built_graph_is_untouched(self):
        self.attached_at_start()
        self.assertFalse(any(LIVE in key or GOAL in key for key in self.graph.edges))

    def test_dump_keeps_weights(self):
        loaded = load_graph(dump_graph(self.graph), self.bank, self.scorer)
        self.assertEqual(loaded, self.graph)
        self.assertIsNotNone(attach_queries(loaded, *self.start()))
