"""
Seeded experiment suites.

Every suite is a pure function of its ``ExperimentConfig``: demonstrations come from the config's
demo seeds, episode ``i`` of every cell starts from ``base_seed + i`` and the single-demonstration
baseline draws its demonstration from a generator seeded with ``(base_seed, i)``.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import PlacementFailure, ScriptFailure
from core.geometry import Action, RigidTransform, magnitude, symmetric_yaw_error
from demobank.parts import Keyframe, Scheme, Stage, build_bank
from experiments.config import Suite
from experiments.metrics import ErrorTable, aggregate
from planner.graph import build_graph
from servo.control import ALIGNMENT_ERRORS, frame_align
from servo.episode import run_episode
from similarity.scores import ScoreKind
from simulator.render import render
from simulator.scripted import hover_pose, scripted_demo
from simulator.world import TaskKind, reset

logger = logging.getLogger(__name__)

# spare seeds tried per requested demonstration before recording gives up
RECORD_ATTEMPTS_PER_DEMO = 5
DISPLACEMENT_EDGES = (0.0, 0.02, 0.05, 0.10)
SELF_MATCH_QUERIES = 5
RANDOM_SINGLE = 'random_single'


@dataclass
class SuiteResult:
    config: object
    rows: list = field(default_factory=list)
    # episode traces behind each row, in row order
    traces: list = field(default_factory=list)
    # method -> ErrorTable, ranking evaluations only
    tables: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def experiment(self):
        return self.config.suite.value

    def add(self, row, traces):
        self.rows.append(row)
        self.traces.append(traces)
        logger.info('%s %s: success %d/%d', self.experiment, dict(row.cell), row.success, row.episodes)

    def find(self, **cell):
        return [row for row in self.rows if all(row.parameter(name) == value for name, value in cell.items())]


def record_demos(task, count, first_seed, scene_config=None):
    """
    Scripted demonstrations from consecutive seeds starting at ``first_seed``. Seeds whose scene
    cannot be placed or scripted are logged and skipped.
    """
    demos = []
    seed = first_seed
    limit = first_seed + max(count, 1) * RECORD_ATTEMPTS_PER_DEMO
    while len(demos) < count:
        if seed >= limit:
            raise ScriptFailure(f'Only {len(demos)} of {count} {task.target_shape.value} demos could be recorded.')
        try:
            demos.append(scripted_demo(task, seed, scene_config))
        except (PlacementFailure, ScriptFailure) as exc:
            logger.warning('skipping demo seed %d: %s', seed, exc)
        seed += 1
    return demos


def goal_observation(trajectory):
    """Final frame of a scripted demonstration and the scene it shows."""
    final = trajectory.final_state
    return render(final), final.objects


def _map(config, function, items):
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            return list(executor.map(function, items))
    return [function(item) for item in items]


def run_cell(config, task, bank, goal=None, random_seed=None, score_kind=None):
    """Paired-seed episodes of one cell; the graph is built once and shared by all of them."""
    scene = config.scene_config
    graph = build_graph(bank, config.scorer(score_kind), config.planner_config())
    backend = config.make_backend()
    goal_frame, goal_objects = goal if goal is not None else (None, ())

    def episode(seed):
        return run_episode(task, bank, seed, goal=goal_frame, goal_objects=goal_objects, servo_config=config.servo,
                           backend=backend, scene_config=scene, graph=graph, random_seed=random_seed)

    return _map(config, episode, config.episode_seeds())


def run_random_single(config, task, pool, goal=None):
    """Baseline: every episode follows one randomly drawn demonstration, unsegmented."""
    scene = config.scene_config
    backend = config.make_backend()
    goal_frame, goal_objects = goal if goal is not None else (None, ())
    graphs = {}

    def graph_for(index):
        if index not in graphs:
            bank = build_bank([pool[index]], Scheme.P1)
            graphs[index] = build_graph(bank, config.scorer(), config.planner_config())
        return graphs[index]

    picks = [int(np.random.default_rng([config.base_seed, episode]).integers(len(pool)))
             for episode in range(config.episodes)]
    # build serially so worker threads only read the cache
    for index in sorted(set(picks)):
        graph_for(index)

    def episode(item):
        seed, index = item
        graph = graphs[index]
        return run_episode(task, graph.bank, seed, goal=goal_frame, goal_objects=goal_objects,
                           servo_config=config.servo, backend=backend, scene_config=scene, graph=graph)

    return _map(config, episode, list(zip(config.episode_seeds(), picks)))


def _cell(condition, scheme, demos, target, **extra):
    return {'condition': condition, 'scheme': str(scheme), 'demos': demos, 'target': str(target), **extra}


def _target_of(part):
    return part.task_tag.split(':')[-1]


def selected_count(traces, bank):
    """Episodes whose executed parts all come from demonstrations of the commanded target shape."""
    count = 0
    for trace in traces:
        parts = [bank.get(part_id) for part_id in trace.executed_parts]
        if parts and all(_target_of(part) == trace.task.target_shape.value for part in parts):
            count += 1
    return count


def multipart(config):
    """Success per segmentation scheme and demonstration count, plus the single random demo baseline."""
    result = SuiteResult(config)
    task = config.task()
    demos = record_demos(task, max(config.demo_counts), config.demo_seed(0), config.scene_config)
    for scheme in config.schemes:
        for count in config.demo_counts:
            bank = build_bank(demos[:count], scheme)
            traces = run_cell(config, task, bank)
            result.add(aggregate(result.experiment, _cell('graph', scheme.value, count, task.target_shape.value),
                                 traces), traces)

    traces = run_random_single(config, task, demos)
    result.add(aggregate(result.experiment, _cell(RANDOM_SINGLE, Scheme.P1.value, 1, task.target_shape.value),
                         traces), traces)
    return result


def goal_conditioned(config):
    """
    Three conditions per target shape: demonstrations of that shape only, demonstrations of every
    shape without a goal, and the same mixed bank searched towards a goal image. A ``mean`` row per
    condition pools the episodes of all shapes.
    """
    result = SuiteResult(config)
    scheme = config.schemes[0]
    tasks = [config.task(shape) for shape in config.target_shapes]
    count = max(config.demo_counts)
    demos = {
        task.target_shape: record_demos(task, count, config.demo_seed(0, block), config.scene_config)
        for block, task in enumerate(tasks)
    }
    goals = {
        task.target_shape: goal_observation(
            record_demos(task, 1, config.held_out_seed(block), config.scene_config)[0])
        for block, task in enumerate(tasks)
    }
    mixed = build_bank([demo for task in tasks for demo in demos[task.target_shape][:count]], scheme)

    conditions = (
        ('single_shape', lambda task: build_bank(demos[task.target_shape][:count], scheme), False),
        ('mixed', lambda task: mixed, False),
        ('mixed_goal', lambda task: mixed, True),
    )
    for condition, bank_for, conditioned in conditions:
        pooled, pooled_selected = [], 0
        for task in tasks:
            bank = bank_for(task)
            goal = goals[task.target_shape] if conditioned and config.goal_conditioning else None
            traces = run_cell(config, task, bank, goal)
            selected = selected_count(traces, bank)
            result.add(aggregate(result.experiment, _cell(condition, scheme.value, count, task.target_shape.value),
                                 traces, selected), traces)
            pooled.extend(traces)
            pooled_selected += selected
        result.add(aggregate(result.experiment, _cell(condition, scheme.value, count, 'mean'), pooled,
                             pooled_selected), pooled)
    return result


def crosstask(config):
    """
    Pick and place from one demonstration of it plus ``N`` shape-sorting demonstrations, searched
    towards a goal image, for every ``N`` in ``demo_counts``.
    """
    result = SuiteResult(config)
    scheme = config.schemes[0]
    task = config.task(kind=TaskKind.PICK_AND_PLACE)
    other = config.task(kind=TaskKind.SHAPE_SORTING)
    pool = record_demos(task, max(max(config.demo_counts), 1), config.demo_seed(0), config.scene_config)
    borrowed = record_demos(other, max(config.demo_counts), config.demo_seed(0, block=1), config.scene_config)
    goal = goal_observation(record_demos(task, 1, config.held_out_seed(), config.scene_config)[0])
    goal = goal if config.goal_conditioning else None

    own_tag = f'{task.kind.value}:{task.target_shape.value}'
    for count in config.demo_counts:
        bank = build_bank([pool[0], *borrowed[:count]], scheme)
        traces = run_cell(config, task, bank, goal)
        borrowing = sum(
            any(bank.get(part_id).task_tag != own_tag for part_id in trace.executed_parts) for trace in traces
        )
        result.extras.setdefault('episodes_using_other_task', {})[count] = borrowing
        result.add(aggregate(result.experiment, _cell('graph', scheme.value, count, task.target_shape.value),
                             traces), traces)

    traces = run_random_single(config, task, pool, goal)
    result.add(aggregate(result.experiment, _cell(RANDOM_SINGLE, Scheme.P1.value, 1, task.target_shape.value),
                         traces), traces)
    return result


def pool_keyframe(state):
    """Localization keyframe of a scene: the home view with the target as foreground."""
    return Keyframe.annotate(render(state), Action(), state.target.id, Stage.LOCALIZE, state.objects)


def target_errors(query, candidate):
    """Planar position and symmetric yaw error between two scenes' target objects."""
    a, b = query.target, candidate.target
    position = math.hypot(a.pose.translation[0] - b.pose.translation[0], a.pose.translation[1] - b.pose.translation[1])
    return position, symmetric_yaw_error(a.pose.yaw, b.pose.yaw, a.geometry.symmetry)


def rank(scorer, pool, frame, objects):
    """Pool indices best first; ties keep pool order."""
    scores = [scorer.score(keyframe, frame, objects).normalized for keyframe in pool]
    return sorted(range(len(pool)), key=lambda index: -scores[index])


def evaluate_similarity(config):
    """
    Rank a pool of localization keyframes against seeded query scenes with every score kind and
    record the target pose error of the top-ranked entry next to a random pick. Queries are bucketed
    by the smallest displacement any pool entry offers.
    """
    result = SuiteResult(config)
    task = config.task()
    scene = config.scene_config
    pool_size = config.demo_counts[0]
    pool_states = [reset(task, config.demo_seed(index), scene) for index in range(pool_size)]
    pool = [pool_keyframe(state) for state in pool_states]
    scorers = {kind.value: config.scorer(kind) for kind in config.score_kinds}
    tables = {method: ErrorTable(method, DISPLACEMENT_EDGES) for method in (*scorers, 'random')}

    for seed in config.episode_seeds():
        query = reset(task, seed, scene)
        frame = render(query)
        errors = [target_errors(query, state) for state in pool_states]
        displacement = min(position for position, _ in errors)
        for method, scorer in scorers.items():
            top = rank(scorer, pool, frame, query.objects)[0]
            tables[method].add(displacement, *errors[top])
        pick = int(np.random.default_rng([config.base_seed, seed]).integers(pool_size))
        tables['random'].add(displacement, *errors[pick])

    self_ranks = {}
    for method, scorer in scorers.items():
        ranks = []
        for index in range(min(SELF_MATCH_QUERIES, pool_size)):
            state = pool_states[index]
            ranks.append(rank(scorer, pool, render(state), state.objects).index(index) + 1)
        self_ranks[method] = ranks
    result.tables = tables
    result.extras['self_ranks'] = self_ranks
    for method, table in tables.items():
        logger.info('%s top-1 position error %.4f m over %d queries', method, table.mean_position_error,
                    len(table.rows))
    return result


def hover_keyframe(trajectory):
    """Last localization keyframe of a demonstration: hovering over the target before reorienting."""
    return [keyframe for keyframe in trajectory.keyframes if keyframe.stage == Stage.LOCALIZE][-1]


def recorded_motion(trajectory):
    """End-effector motion from the first keyframe of ``trajectory`` to its hover keyframe."""
    return trajectory.keyframes[0].frame.camera_pose.inverse().compose(hover_keyframe(trajectory).frame.camera_pose)


def action_errors(predicted, expected):
    size = magnitude(predicted.inverse().compose(expected))
    return size.translation_norm, size.rotation_angle


def evaluate_next_action(config):
    """
    Predict the motion from the home view to the hover pose over the target, after retrieving the
    top-ranked demonstration with every score kind. Flow-based kinds align to the retrieved hover
    keyframe in one unclamped step; embeddings carry no geometry, so they (and a random pick) replay
    the retrieved demonstration's recorded motion. Errors are taken against the exact hover pose and
    bucketed like the similarity evaluation.
    """
    result = SuiteResult(config)
    task = config.task()
    scene = config.scene_config
    pool_size = config.demo_counts[0]
    demos = record_demos(task, pool_size, config.demo_seed(0), scene)
    pool = [demo.keyframes[0] for demo in demos]
    starts = [reset(task, demo.seed, scene) for demo in demos]
    scorers = {kind.value: config.scorer(kind) for kind in config.score_kinds}
    backend = config.make_backend()
    tables = {method: ErrorTable(method, DISPLACEMENT_EDGES) for method in (*scorers, 'random')}
    failures = {method: 0 for method in scorers}

    for seed in config.episode_seeds():
        query = reset(task, seed, scene)
        frame = render(query)
        expected = query.ee_pose.inverse().compose(hover_pose(query.target, query.ee_pose.yaw, scene))
        displacement = min(target_errors(query, start)[0] for start in starts)
        for method, scorer in scorers.items():
            demo = demos[rank(scorer, pool, frame, query.objects)[0]]
            predicted = recorded_motion(demo)
            if method != ScoreKind.EMBEDDING.value:
                try:
                    _, fit = frame_align(frame, hover_keyframe(demo), backend, config.servo, query.objects)
                    predicted = fit.transform
                except ALIGNMENT_ERRORS as exc:
                    failures[method] += 1
                    predicted = RigidTransform.identity()
                    logger.debug('%s: alignment for query %d failed (%s)', method, seed, exc.code)
            tables[method].add(displacement, *action_errors(predicted, expected))
        pick = demos[int(np.random.default_rng([config.base_seed, seed]).integers(pool_size))]
        tables['random'].add(displacement, *action_errors(recorded_motion(pick), expected))

    result.tables = tables
    result.extras['alignment_failures'] = failures
    for method, table in tables.items():
        logger.info('%s next-action position error %.4f m over %d queries', method, table.mean_position_error,
                    len(table.rows))
    return result


def stage_table(config):
    """Stage outcome counts per segmentation scheme and score kind, all over the same demonstrations."""
    result = SuiteResult(config)
    task = config.task()
    count = max(config.demo_counts)
    demos = record_demos(task, count, config.demo_seed(0), config.scene_config)
    for scheme in config.schemes:
        bank = build_bank(demos, scheme)
        for kind in config.score_kinds:
            traces = run_cell(config, task, bank, score_kind=kind)
            result.add(aggregate(result.experiment, _cell('graph', scheme.value, count, task.target_shape.value,
                                                          score=kind.value), traces), traces)
    return result


SUITES = {
    Suite.MULTIPART: multipart,
    Suite.GOAL: goal_conditioned,
    Suite.CROSSTASK: crosstask,
    Suite.SIMILARITY: evaluate_similarity,
    Suite.NEXT_ACTION: evaluate_next_action,
    Suite.STAGE_TABLE: stage_table,
}


def run_suite(config):
    return SUITES[config.suite](config)
