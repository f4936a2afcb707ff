from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from correspondence.backends import BackendName, make_backend
from core.exceptions import DemographError
from demobank import storage
from planner.graph import CombinationMode, PlannerConfig, build_graph
from planner.serializers import dump_graph
from similarity.scorer import Scorer, SimilarityConfig
from similarity.scores import ScoreKind


class Command(BaseCommand):
    help = 'Score every stage-compatible pair of parts in a bank and write the graph as JSON.'

    def add_arguments(self, parser):
        parser.add_argument('bank', help='Bank directory written by the record command.')
        parser.add_argument('out', help='Graph JSON file.')
        parser.add_argument('--kind', choices=ScoreKind.values)
        parser.add_argument('--backend', choices=BackendName.values)
        parser.add_argument('--mode', choices=CombinationMode.values)
        parser.add_argument('--temperature', type=float)
        parser.add_argument('--no-stage-filter', action='store_true')
        parser.add_argument('--workers', type=int)

    def handle(self, *args, **options):
        overrides = {
            'mode': options['mode'],
            'temperature': options['temperature'],
            'workers': options['workers'],
            'stage_filter': False if options['no_stage_filter'] else None,
        }
        try:
            config = PlannerConfig.from_settings(**{k: v for k, v in overrides.items() if v is not None})
            similarity = SimilarityConfig.from_settings(**({'kind': options['kind']} if options['kind'] else {}))
            scorer = Scorer(similarity, make_backend(options['backend']))
            graph = build_graph(storage.load(options['bank']), scorer, config)
        except (DemographError, serializers.ValidationError, ValueError, OSError) as exc:
            raise CommandError(str(exc)) from exc

        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(dump_graph(graph))
        self.stdout.write(f'wrote {len(graph.nodes)} nodes and {len(graph.edges)} edges to {out}')
