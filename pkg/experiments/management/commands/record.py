from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import DemographError
from demobank import storage
from demobank.parts import Scheme, build_bank
from experiments.suites import record_demos
from simulator.shapes import GRASPABLE
from simulator.world import SceneConfig, TaskKind, make_task


class Command(BaseCommand):
    help = 'Record scripted demonstrations, segment them and save them as a demonstration bank.'

    def add_arguments(self, parser):
        parser.add_argument('out', help='Bank directory; must not exist unless --overwrite is given.')
        parser.add_argument('--overwrite', action='store_true', help='Replace an existing bank at OUT.')
        parser.add_argument('--task', choices=TaskKind.values, default=TaskKind.SHAPE_SORTING)
        parser.add_argument('--shape', choices=[shape.value for shape in GRASPABLE], default='trapeze')
        parser.add_argument('--demos', type=int, default=5)
        parser.add_argument('--seed', type=int, help='First demo seed; unplaceable seeds are skipped.')
        parser.add_argument('--scheme', choices=Scheme.values, default=Scheme.P3)

    def handle(self, *args, **options):
        if options['demos'] < 1:
            raise CommandError('--demos must be at least 1')
        seed = options['seed']
        if seed is None:
            seed = settings.EXPERIMENTS['BASE_SEED'] + settings.EXPERIMENTS['DEMO_SEED_OFFSET']
        config = SceneConfig.from_settings()
        task = make_task(options['task'], options['shape'], config)
        try:
            demos = record_demos(task, options['demos'], seed, config)
            bank = build_bank(demos, options['scheme'])
            storage.save(bank, options['out'], overwrite=options['overwrite'])
        except DemographError as exc:
            raise CommandError(str(exc)) from exc
        self.stdout.write(f'saved {len(bank)} parts from {len(demos)} demos to {options["out"]}')
