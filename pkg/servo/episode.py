import logging
from dataclasses import dataclass, field

from core.exceptions import EmptyBank, NoPath
from correspondence.backends import make_backend
from planner.graph import PlannerConfig, attach_goal, attach_live, build_graph
from planner.search import random_plan, replan
from servo.control import ServoConfig, sequence_track
from similarity.scorer import Scorer
from simulator.render import render
from simulator.world import StageOutcome, evaluate_stages, reset

logger = logging.getLogger(__name__)


@dataclass
class EpisodeTrace:
    task: object
    seed: int
    plans: list = field(default_factory=list)
    executed_parts: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    keyframes: list = field(default_factory=list)
    outcome: StageOutcome = field(default_factory=StageOutcome)
    # error code that ended planning early, if any
    failure: str = ''

    @property
    def step_count(self):
        return len(self.steps)

    @property
    def plan_score(self):
        return self.plans[0].combined_score if self.plans else None


def _execute(trace, state, part, backend, servo_config):
    state, rows, results = sequence_track(state, part, backend, servo_config)
    trace.executed_parts.append(part.part_id)
    trace.steps.extend(rows)
    trace.keyframes.extend(results)
    return state


def run_episode(task, bank, seed, goal=None, goal_objects=(), scorer=None, planner_config=None, servo_config=None,
                backend=None, scene_config=None, graph=None, random_seed=None, observe=None):
    """
    Closed-loop, goal-conditioned imitation from a seeded reset.

    Plans from the rendered live view, tracks the first part of the plan, then replans from the new
    observation over the remaining stages until a terminal part has run or no path is left. Pass a
    prebuilt ``graph`` to reuse one across episodes. With ``random_seed`` set, a random walk through
    the graph replaces planning and its whole path is executed. ``observe`` is called with every frame
    the episode plans from and with the final view.
    """
    servo_config = servo_config or ServoConfig.from_settings()
    backend = backend or make_backend()
    state = reset(task, seed, scene_config)
    trace = EpisodeTrace(task=task, seed=seed)

    try:
        if graph is None:
            graph = build_graph(bank, scorer or Scorer(), planner_config or PlannerConfig.from_settings())
    except EmptyBank as exc:
        trace.failure = exc.code
        trace.outcome = evaluate_stages(state)
        logger.info('episode %s: %s', seed, exc)
        return trace

    goal_graph = attach_goal(graph, goal, goal_objects)
    parts = {part.part_id: part for part in graph.bank}
    while True:
        live = render(state)
        if observe is not None:
            observe(live)
        try:
            if random_seed is None:
                plan = replan(goal_graph, live, trace.executed_parts, state.objects)
            else:
                plan = random_plan(attach_live(goal_graph, live, state.objects), random_seed)
        except NoPath as exc:
            trace.failure = exc.code
            break
        trace.plans.append(plan)

        if random_seed is not None:
            for part_id in plan.path:
                state = _execute(trace, state, parts[part_id], backend, servo_config)
            break
        state = _execute(trace, state, parts[plan.path[0]], backend, servo_config)
        if graph.node(plan.path[0]).is_terminal:
            break

    if observe is not None:
        observe(render(state))
    trace.outcome = evaluate_stages(state)
    logger.info('episode %s: %s after %d steps over %s', seed,
                'success' if trace.outcome.success else 'failure', trace.step_count,
                ', '.join(trace.executed_parts) or 'no parts')
    return trace
