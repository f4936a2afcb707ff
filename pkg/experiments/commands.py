"""
Plumbing shared by the management commands: config loading, result files and trend checks.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from core.exceptions import DemographError
from core.serializers import load_instance, parse_json
from experiments.config import ExperimentConfig, Suite
from experiments.metrics import STAGE_COLUMNS, write_csv, write_summary
from experiments.serializers import ExperimentConfigSerializer
from experiments.suites import RANDOM_SINGLE, run_suite
from similarity.scores import ScoreKind

logger = logging.getLogger(__name__)

MULTIPART_MARGIN = 0.10
GOAL_MARGIN = 0.15
CHANCE_BAND = 0.15
CROSSTASK_MARGIN = 0.10


@dataclass(frozen=True)
class TrendCheck:
    name: str
    passed: bool
    detail: str


def load_config(suite, path=None, **overrides):
    """Experiment config from a JSON file (or the suite defaults), with command-line overrides on top."""
    suite = Suite(suite)
    if path is None:
        config = ExperimentConfig.from_settings(suite)
    else:
        try:
            content = Path(path).read_bytes()
        except OSError as exc:
            raise CommandError(f'Cannot read config {path}: {exc}') from exc
        data = parse_json(content)
        if not isinstance(data, dict):
            raise serializers.ValidationError('An experiment config must be a JSON object.')
        data.setdefault('suite', suite.value)
        if data['suite'] != suite.value:
            raise serializers.ValidationError(f'Config is for {data["suite"]}, not {suite.value}.')
        config = load_instance(ExperimentConfigSerializer, data)
    try:
        return config.with_overrides(**overrides)
    except ValueError as exc:
        raise serializers.ValidationError(str(exc)) from exc


def _chain_holds(row):
    counts = [getattr(row, stage) for stage in STAGE_COLUMNS]
    return all(a >= b for a, b in zip(counts, counts[1:]))


def _rate(rows):
    return rows[0].success_rate if rows else None


def check_trends(result):
    config = result.config
    checks = [TrendCheck('stage_chain', all(_chain_holds(row) for row in result.rows),
                         'position >= grasp >= orientation >= success in every cell')]

    if config.suite == Suite.MULTIPART:
        top, bottom = max(config.demo_counts), min(config.demo_counts)
        three = _rate(result.find(condition='graph', scheme='P3', demos=top))
        one = _rate(result.find(condition='graph', scheme='P1', demos=top))
        if three is not None and one is not None:
            checks.append(TrendCheck('parts_help', three >= one + MULTIPART_MARGIN,
                                     f'P3 {three:.2f} vs P1 {one:.2f} with {top} demos'))
        fewer = _rate(result.find(condition='graph', scheme='P3', demos=bottom))
        if three is not None and fewer is not None and top != bottom:
            checks.append(TrendCheck('demos_help', three >= fewer,
                                     f'P3 {three:.2f} with {top} demos vs {fewer:.2f} with {bottom}'))

    elif config.suite == Suite.GOAL:
        conditioned = result.find(condition='mixed_goal', target='mean')
        unconditioned = result.find(condition='mixed', target='mean')
        if conditioned and unconditioned:
            with_goal, without = conditioned[0].success_rate, unconditioned[0].success_rate
            checks.append(TrendCheck('goal_helps', with_goal >= without + GOAL_MARGIN,
                                     f'conditioned {with_goal:.2f} vs unconditioned {without:.2f}'))
            selection = unconditioned[0].selection_rate
            checks.append(TrendCheck('unconditioned_near_chance', abs(selection - 0.5) <= CHANCE_BAND,
                                     f'unconditioned selects the commanded shape {selection:.2f} of the time'))

    elif config.suite == Suite.CROSSTASK:
        rows = sorted(result.find(condition='graph'), key=lambda row: row.parameter('demos'))
        if len(rows) > 1:
            most, alone = rows[-1].success_rate, rows[0].success_rate
            checks.append(TrendCheck(
                'other_task_helps', most >= alone + CROSSTASK_MARGIN,
                f'{rows[-1].parameter("demos")} borrowed demos {most:.2f} vs {rows[0].parameter("demos")} {alone:.2f}',
            ))

    elif config.suite == Suite.STAGE_TABLE:
        for kind in config.score_kinds:
            three = _rate(result.find(scheme='P3', score=kind.value))
            one = _rate(result.find(scheme='P1', score=kind.value))
            if three is not None and one is not None:
                checks.append(TrendCheck(f'parts_help_{kind.value}', three >= one,
                                         f'{kind.value}: P3 {three:.2f} vs P1 {one:.2f}'))

    elif config.suite == Suite.NEXT_ACTION:
        flow, embedding = result.tables.get(ScoreKind.FS.value), result.tables.get(ScoreKind.EMBEDDING.value)
        if flow is not None and embedding is not None:
            checks.append(TrendCheck(
                'alignment_beats_copying', flow.mean_position_error <= embedding.mean_position_error,
                f'fs {flow.mean_position_error:.4f} m vs embedding {embedding.mean_position_error:.4f} m',
            ))

    else:
        tables = result.tables
        flow = tables.get(ScoreKind.FS.value)
        if flow is not None:
            checks.append(TrendCheck(
                'flow_beats_random', flow.mean_position_error <= tables['random'].mean_position_error,
                f'fs {flow.mean_position_error:.4f} m vs random {tables["random"].mean_position_error:.4f} m',
            ))
        # a masked demo embedding never equals the whole-view live embedding, so embeddings are exempt
        ranks = {kind: values for kind, values in result.extras.get('self_ranks', {}).items()
                 if kind != ScoreKind.EMBEDDING.value}
        checks.append(TrendCheck('self_match_first', all(rank == 1 for values in ranks.values() for rank in values),
                                 f'exact-match queries retrieve themselves first ({", ".join(ranks)})'))
    return checks


def write_result(result, out_dir, checks=None):
    """``<suite>.csv`` (or one CSV per ranking method) and ``<suite>.json``; returns the paths written."""
    out_dir = Path(out_dir)
    name = result.experiment
    paths = []
    if result.tables:
        for method, table in result.tables.items():
            paths.append(write_csv(out_dir / f'{name}_{method}.csv', table.summary()))
    else:
        paths.append(write_csv(out_dir / f'{name}.csv', [row.as_dict() for row in result.rows]))
    summary = {
        'experiment': name,
        'config': ExperimentConfigSerializer(result.config).data,
        'rows': [row.as_dict() for row in result.rows],
        'tables': {method: table.summary() for method, table in result.tables.items()},
        'extras': {
            key: {str(k): v for k, v in value.items()} if isinstance(value, dict) else value
            for key, value in result.extras.items()
        },
    }
    if checks is not None:
        summary['checks'] = [{'name': c.name, 'passed': c.passed, 'detail': c.detail} for c in checks]
    paths.append(write_summary(out_dir / f'{name}.json', summary))
    return paths


class ExperimentCommand(BaseCommand):
    """Base for the experiment suite commands; subclasses only name their suite."""
    suite = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON experiment config; omitted keys use the suite defaults.')
        parser.add_argument('--out', help='Output directory (defaults to the config, then DEMOGRAPH_OUTPUT_DIR).')
        parser.add_argument('--episodes', type=int, help='Episodes (or queries) per cell.')
        parser.add_argument('--base-seed', type=int)
        parser.add_argument('--workers', type=int, help='Episodes run concurrently within a cell.')
        parser.add_argument('--check-trends', action='store_true',
                            help='Exit with status 2 when an expected trend does not hold.')

    def handle(self, *args, **options):
        try:
            config = load_config(self.suite, options['config'], episodes=options['episodes'],
                                 base_seed=options['base_seed'], workers=options['workers'],
                                 output_dir=options['out'])
            result = run_suite(config)
        except (DemographError, serializers.ValidationError, ValueError, OSError) as exc:
            raise CommandError(str(exc)) from exc

        checks = check_trends(result) if options['check_trends'] else None
        for path in write_result(result, config.output_dir, checks):
            self.stdout.write(f'wrote {path}')
        for row in result.rows:
            label = ', '.join(f'{k}={v}' for k, v in row.cell)
            stages = ' '.join(f'{stage}={row.rate(stage):.2f}' for stage in STAGE_COLUMNS)
            marker = ' (baseline)' if row.parameter('condition') == RANDOM_SINGLE else ''
            self.stdout.write(f'{label}: {stages}{marker}')

        if checks is not None:
            failed = [check for check in checks if not check.passed]
            for check in checks:
                self.stdout.write(f'{"ok" if check.passed else "FAILED"} {check.name}: {check.detail}')
            if failed:
                raise CommandError(f'{len(failed)} trend check(s) failed: {", ".join(c.name for c in failed)}',
                                   returncode=2)
