from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from core.exceptions import DemographError
from core.serializers import render_json
from correspondence.backends import BackendName, make_backend
from demobank import storage
from experiments.suites import goal_observation, record_demos
from servo.control import ServoConfig
from servo.episode import run_episode
from servo.serializers import EpisodeTraceSerializer
from simulator.shapes import GRASPABLE
from simulator.world import SceneConfig, TaskKind, make_task


class Command(BaseCommand):
    help = 'Run one seeded episode against a bank and write its trace.'

    def add_arguments(self, parser):
        parser.add_argument('bank', help='Bank directory written by the record command.')
        parser.add_argument('--task', choices=TaskKind.values, default=TaskKind.SHAPE_SORTING)
        parser.add_argument('--shape', choices=[shape.value for shape in GRASPABLE], default='trapeze')
        parser.add_argument('--seed', type=int, help='Episode seed (defaults to the base seed).')
        parser.add_argument('--goal-seed', type=int,
                            help='Condition on the final frame of a scripted demo recorded from this seed.')
        parser.add_argument('--backend', choices=BackendName.values)
        parser.add_argument('--random-walk', type=int, metavar='SEED',
                            help='Follow a random path through the graph instead of planning.')
        parser.add_argument('--out', help='Output directory (defaults to <output dir>/run-<seed>).')
        parser.add_argument('--frames', action='store_true', help='Also save every frame the episode planned from.')

    def handle(self, *args, **options):
        seed = options['seed'] if options['seed'] is not None else settings.EXPERIMENTS['BASE_SEED']
        out = Path(options['out'] or Path(settings.EXPERIMENTS['OUTPUT_DIR']) / f'run-{seed}')
        config = SceneConfig.from_settings()
        task = make_task(options['task'], options['shape'], config)
        frames = []

        try:
            bank = storage.load(options['bank'])
            goal, goal_objects = None, ()
            if options['goal_seed'] is not None:
                goal, goal_objects = goal_observation(record_demos(task, 1, options['goal_seed'], config)[0])
            trace = run_episode(
                task, bank, seed, goal=goal, goal_objects=goal_objects, servo_config=ServoConfig.from_settings(),
                backend=make_backend(options['backend']), scene_config=config, random_seed=options['random_walk'],
                observe=frames.append if options['frames'] else None,
            )
        except (DemographError, serializers.ValidationError, ValueError, OSError) as exc:
            raise CommandError(str(exc)) from exc

        out.mkdir(parents=True, exist_ok=True)
        (out / 'trace.json').write_bytes(render_json(EpisodeTraceSerializer(trace).data))
        for index, frame in enumerate(frames):
            np.save(out / f'frame{index:03d}_rgb.npy', frame.rgb)
            np.save(out / f'frame{index:03d}_depth.npy', frame.depth)
            np.save(out / f'frame{index:03d}_ids.npy', frame.object_ids)
        self.stdout.write(f'{len(trace.steps)} steps over {len(trace.executed_parts)} parts, trace in {out}')

        outcome = trace.outcome
        if not outcome.success:
            stages = ', '.join(f'{name}={getattr(outcome, name)}' for name in
                               ('correct_position', 'correct_grasp', 'correct_orientation'))
            raise CommandError(f'Episode {seed} failed ({stages}).', returncode=2)
