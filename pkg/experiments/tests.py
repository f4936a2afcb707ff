import json
import tempfile
import unittest
from io import StringIO
from pathlib import Path
from types import SimpleNamespace

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from rest_framework import serializers

from core.exceptions import ScriptFailure
from core.serializers import load_instance
from correspondence.backends import make_backend
from demobank import storage
from experiments.commands import check_trends, load_config, write_result
from experiments.config import ExperimentConfig, Suite
from experiments.metrics import ErrorTable, MetricsRow, aggregate, write_csv
from experiments.serializers import ExperimentConfigSerializer
from experiments.suites import (
    SuiteResult, action_errors, evaluate_next_action, evaluate_similarity, hover_keyframe, multipart, record_demos,
    recorded_motion, run_suite, stage_table,
)
from planner.serializers import load_graph
from servo.control import ServoConfig, frame_align
from servo.episode import EpisodeTrace
from simulator.render import render
from simulator.scripted import hover_pose
from simulator.shapes import Shape
from simulator.world import SceneConfig, StageOutcome, TaskKind, make_task, reset


def trace(outcome=(False, False, False, False), steps=0, score=None):
    result = EpisodeTrace(task=None, seed=0, outcome=StageOutcome(*outcome))
    result.steps = [None] * steps
    if score is not None:
        result.plans = [SimpleNamespace(combined_score=score)]
    return result


def row(cell, success, episodes=10):
    return MetricsRow('multipart', tuple(cell.items()), episodes, success, success, success, success)


class ExperimentConfigTests(SimpleTestCase):
    def test_suite_defaults(self):
        config = ExperimentConfig.from_settings(Suite.MULTIPART)
        self.assertEqual(config.schemes, ('P1', 'P2', 'P3'))
        self.assertEqual(config.demo_counts, (5, 10, 20))
        self.assertEqual(config.episodes, settings.EXPERIMENTS['EPISODES'])
        self.assertEqual(config.episode_seeds()[:2], [1000, 1001])
        self.assertEqual(config.demo_seed(3), 1000 + 100000 + 3)

        goal = ExperimentConfig.from_settings(Suite.GOAL)
        self.assertEqual(goal.task_kind, TaskKind.PICK_AND_PLACE)
        self.assertEqual(goal.target_shapes, (Shape.TRAPEZE, Shape.OVAL))
        self.assertEqual(goal.demo_counts, (20,))
        self.assertEqual(ExperimentConfig.from_settings(Suite.CROSSTASK).combination_mode, 'inverted_sum')
        self.assertEqual(ExperimentConfig.from_settings(Suite.SIMILARITY).episodes, 100)
        self.assertEqual(config.make_backend().config.max_flow_px, 16.0)
        self.assertIsNone(goal.make_backend().config.max_flow_px)

        next_action = ExperimentConfig.from_settings(Suite.NEXT_ACTION)
        self.assertEqual((next_action.episodes, next_action.demo_counts), (30, (30,)))
        self.assertIsNone(next_action.make_backend().config.max_flow_px)
        stages = ExperimentConfig.from_settings(Suite.STAGE_TABLE)
        self.assertEqual(stages.schemes, ('P1', 'P3'))
        self.assertEqual(stages.score_kinds, ('fs', 'inlier_count'))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ExperimentConfig.from_settings(Suite.MULTIPART, episodes=0)
        with self.assertRaises(ValueError):
            ExperimentConfig.from_settings(Suite.MULTIPART, demo_counts=(0, 5))
        self.assertEqual(ExperimentConfig.from_settings(Suite.CROSSTASK, demo_counts=(0, 5)).demo_counts, (0, 5))

    def test_overrides_skip_missing_values(self):
        config = ExperimentConfig.from_settings(Suite.GOAL).with_overrides(episodes=3, base_seed=None)
        self.assertEqual((config.episodes, config.base_seed), (3, 1000))


class ExperimentConfigSerializerTests(SimpleTestCase):
    def test_minimal(self):
        config = load_instance(ExperimentConfigSerializer, {'suite': 'crosstask'})
        self.assertEqual(config.demo_counts, (0, 5, 10, 20))

    def test_nested_blocks(self):
        config = load_instance(ExperimentConfigSerializer, {
            'suite': 'multipart',
            'demo_counts': [2, 4],
            'episodes': 7,
            'backend': {'name': 'oracle', 'noise_px': 0.5, 'max_flow_px': None},
            'servo': {'gain': 0.5},
            'scene': {'clearance': 0.02},
        })
        self.assertEqual(config.demo_counts, (2, 4))
        self.assertEqual(config.backend_params, {'noise_px': 0.5, 'max_flow_px': None})
        self.assertEqual(config.servo.gain, 0.5)
        self.assertEqual(config.scene_config.clearance, 0.02)
        self.assertEqual(config.make_backend().config.noise_px, 0.5)

    def test_rejects(self):
        for data in (
            {'suite': 'multipart', 'demo_counts': [0]},
            {'suite': 'multipart', 'demo_counts': [5, 5]},
            {'suite': 'multipart', 'episodes': 0},
            {'suite': 'multipart', 'backend': {'name': 'patch_match', 'noise_px': 1.0}},
            {'suite': 'nonsense'},
        ):
            serializer = ExperimentConfigSerializer(data=data)
            self.assertFalse(serializer.is_valid(), data)

    def test_representation_reloads(self):
        config = ExperimentConfig.from_settings(Suite.GOAL, episodes=4)
        reloaded = load_instance(ExperimentConfigSerializer, ExperimentConfigSerializer(config).data)
        self.assertEqual(reloaded, config)

    def test_load_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'config.json'
            path.write_text(json.dumps({'episodes': 2}))
            config = load_config(Suite.SIMILARITY, path, workers=2)
            self.assertEqual((config.suite, config.episodes, config.workers), (Suite.SIMILARITY, 2, 2))
            path.write_text(json.dumps({'suite': 'goal'}))
            with self.assertRaises(serializers.ValidationError):
                load_config(Suite.SIMILARITY, path)


class MetricsTests(SimpleTestCase):
    def test_aggregate(self):
        traces = [
            trace((True, True, True, True), steps=10, score=0.5),
            trace((True, True, False, False), steps=20, score=0.25),
            trace(steps=0),
        ]
        result = aggregate('multipart', {'scheme': 'P3', 'demos': 5}, traces)
        self.assertEqual((result.position, result.grasp, result.orientation, result.success), (2, 2, 1, 1))
        self.assertAlmostEqual(result.success_rate, 1 / 3)
        self.assertEqual(result.mean_plan_score, 0.375)
        self.assertEqual(result.mean_steps, 10.0)
        self.assertEqual(result.parameter('demos'), 5)
        self.assertIsNone(result.selection_rate)

    def test_row_bounds(self):
        with self.assertRaises(ValueError):
            MetricsRow('x', (), 0)
        with self.assertRaises(ValueError):
            MetricsRow('x', (), 2, success=3)

    def test_csv_is_stable(self):
        rows = [row({'scheme': 'P3', 'demos': 5}, 3).as_dict(), row({'scheme': 'P1', 'demos': 5}, 1).as_dict()]
        with tempfile.TemporaryDirectory() as directory:
            first = write_csv(Path(directory) / 'a.csv', rows).read_bytes()
            second = write_csv(Path(directory) / 'b.csv', rows).read_bytes()
        self.assertEqual(first, second)
        lines = first.decode().splitlines()
        self.assertTrue(lines[0].startswith('experiment,scheme,demos,episodes,position_count'))
        self.assertIn(',0.300000,', lines[1])
        self.assertTrue(lines[1].endswith(',,0.000000,'))

    def test_error_table_buckets(self):
        table = ErrorTable('fs', (0.0, 0.02, 0.05))
        table.add(0.01, 0.01, 0.1)
        table.add(0.03, 0.02, 0.2)
        table.add(0.30, 0.06, 0.3)
        summary = {entry['bucket']: entry for entry in table.summary()}
        self.assertEqual(set(summary), {'0.000-0.020', '0.020-0.050', '0.050+', 'all'})
        self.assertEqual(summary['all']['queries'], 3)
        self.assertAlmostEqual(summary['all']['mean_position_error'], 0.03)
        self.assertAlmostEqual(table.mean_position_error, 0.03)


class TrendCheckTests(SimpleTestCase):
    def result(self, p3, p1):
        config = ExperimentConfig.from_settings(Suite.MULTIPART, demo_counts=(5, 20), schemes=('P1', 'P3'))
        result = SuiteResult(config)
        for scheme, rates in (('P1', p1), ('P3', p3)):
            for demos, success in zip((5, 20), rates):
                result.rows.append(row({'condition': 'graph', 'scheme': scheme, 'demos': demos}, success))
        return result

    def test_multipart_trends(self):
        checks = {check.name: check.passed for check in check_trends(self.result(p3=(6, 8), p1=(5, 6)))}
        self.assertEqual(checks, {'stage_chain': True, 'parts_help': True, 'demos_help': True})
        checks = {check.name: check.passed for check in check_trends(self.result(p3=(6, 6), p1=(5, 6)))}
        self.assertFalse(checks['parts_help'])
        self.assertTrue(checks['demos_help'])

    def test_stage_chain(self):
        result = self.result(p3=(6, 8), p1=(5, 6))
        result.rows.append(MetricsRow('multipart', (('condition', 'x'),), 4, 1, 2, 0, 0))
        self.assertFalse(check_trends(result)[0].passed)


class RecordTests(SimpleTestCase):
    def test_gives_up_on_unplaceable_scenes(self):
        config = SceneConfig.from_settings(placement_min=(-0.01, -0.01), placement_max=(0.01, 0.01))
        task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, config)
        with self.assertLogs('experiments.suites', 'WARNING'):
            with self.assertRaises(ScriptFailure):
                record_demos(task, 1, 0, config)

    def test_consecutive_seeds(self):
        config = SceneConfig.from_settings()
        task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, config)
        demos = record_demos(task, 2, 21, config)
        self.assertEqual(len(demos), 2)
        self.assertEqual(demos[0].seed, 21)
        self.assertLess(demos[0].seed, demos[1].seed)


class SimilaritySuiteTests(SimpleTestCase):
    def setUp(self):
        self.config = ExperimentConfig.from_settings(
            Suite.SIMILARITY, demo_counts=(4,), episodes=3, score_kinds=('fs', 'embedding'),
            backend_params={'max_flow_px': None},
        )

    def test_tables(self):
        result = evaluate_similarity(self.config)
        self.assertEqual(set(result.tables), {'fs', 'embedding', 'random'})
        for table in result.tables.values():
            self.assertEqual(len(table.rows), 3)
        ranks = result.extras['self_ranks']
        self.assertEqual(ranks['fs'], [1, 1, 1, 1])
        self.assertEqual(len(ranks['embedding']), 4)
        self.assertTrue(all(1 <= value <= 4 for value in ranks['embedding']))
        names = {check.name: check.passed for check in check_trends(result)}
        self.assertTrue(names['self_match_first'])

    def test_rerun_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            write_result(run_suite(self.config), first)
            write_result(run_suite(self.config), second)
            names = sorted(path.name for path in Path(first).iterdir())
            self.assertEqual(names, ['eval_sim.json', 'eval_sim_embedding.csv', 'eval_sim_fs.csv', 'eval_sim_random.csv'])
            for name in names:
                self.assertEqual((Path(first) / name).read_bytes(), (Path(second) / name).read_bytes())


class NextActionSuiteTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = SceneConfig.from_settings()
        cls.task = make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, cls.scene)
        cls.demo = record_demos(cls.task, 1, 21, cls.scene)[0]
        cls.start = reset(cls.task, cls.demo.seed, cls.scene)
        cls.expected = cls.start.ee_pose.inverse().compose(
            hover_pose(cls.start.target, cls.start.ee_pose.yaw, cls.scene))

    def test_recorded_motion_reaches_the_hover_pose(self):
        self.assertEqual(hover_keyframe(self.demo).stage, 'localize')
        position, orientation = action_errors(recorded_motion(self.demo), self.expected)
        self.assertLess(position, 1e-6)
        self.assertLess(orientation, 1e-5)

    def test_alignment_recovers_the_hover_pose_of_its_own_scene(self):
        _, fit = frame_align(render(self.start), hover_keyframe(self.demo), make_backend('oracle', max_flow_px=None),
                             ServoConfig.from_settings(), self.start.objects)
        position, orientation = action_errors(fit.transform, self.expected)
        self.assertLess(position, 1e-3)
        self.assertLess(orientation, 1e-2)

    def test_tables(self):
        config = ExperimentConfig.from_settings(Suite.NEXT_ACTION, demo_counts=(3,), episodes=2,
                                                score_kinds=('fs', 'embedding'))
        result = evaluate_next_action(config)
        self.assertEqual(set(result.tables), {'fs', 'embedding', 'random'})
        for table in result.tables.values():
            self.assertEqual(len(table.rows), 2)
            self.assertTrue(all(row[1] >= 0 and row[2] >= 0 for row in table.rows))
        self.assertEqual(set(result.extras['alignment_failures']), {'fs', 'embedding'})
        self.assertEqual(result.extras['alignment_failures']['embedding'], 0)
        self.assertIn('alignment_beats_copying', {check.name for check in check_trends(result)})


class StageTableSuiteTests(SimpleTestCase):
    def test_cells_per_scheme_and_score(self):
        config = ExperimentConfig.from_settings(Suite.STAGE_TABLE, demo_counts=(1,), episodes=1, backend_params={})
        result = stage_table(config)
        cells = [(row.parameter('scheme'), row.parameter('score')) for row in result.rows]
        self.assertEqual(cells, [('P1', 'fs'), ('P1', 'inlier_count'), ('P3', 'fs'), ('P3', 'inlier_count')])
        self.assertTrue(all(row.episodes == 1 for row in result.rows))
        names = {check.name for check in check_trends(result)}
        self.assertTrue({'stage_chain', 'parts_help_fs', 'parts_help_inlier_count'} <= names)

    def test_trend_per_score(self):
        config = ExperimentConfig.from_settings(Suite.STAGE_TABLE)
        result = SuiteResult(config)
        for scheme, fs, inliers in (('P1', 2, 5), ('P3', 6, 4)):
            result.rows.append(row({'scheme': scheme, 'score': 'fs'}, fs))
            result.rows.append(row({'scheme': scheme, 'score': 'inlier_count'}, inliers))
        checks = {check.name: check.passed for check in check_trends(result)}
        self.assertTrue(checks['parts_help_fs'])
        self.assertFalse(checks['parts_help_inlier_count'])


class MultipartSuiteTests(SimpleTestCase):
    def test_single_cell(self):
        config = ExperimentConfig.from_settings(Suite.MULTIPART, demo_counts=(1,), schemes=('P3',), episodes=1,
                                                backend_params={})
        result = multipart(config)
        self.assertEqual([row.parameter('condition') for row in result.rows], ['graph', 'random_single'])
        self.assertTrue(all(row.episodes == 1 for row in result.rows))
        self.assertEqual(len(result.traces[0]), 1)


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()

    def call(self, *args):
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def test_record_build_and_run(self):
        bank_path = self.root / 'bank'
        self.call('record', str(bank_path), '--demos', '1', '--seed', '21')
        bank = storage.load(bank_path)
        self.assertEqual(len(bank), 3)

        graph_path = self.root / 'graph.json'
        self.call('build_graph', str(bank_path), str(graph_path))
        graph = load_graph(graph_path.read_bytes())
        self.assertEqual(len(graph.nodes), 3)

        run_path = self.root / 'run'
        self.call('run', str(bank_path), '--seed', '21', '--out', str(run_path), '--frames')
        trace = json.loads((run_path / 'trace.json').read_text())
        self.assertTrue(trace['outcome']['success'])
        self.assertEqual(len(list(run_path.glob('frame*_rgb.npy'))), len(trace['plans']) + 1)

    def test_record_is_deterministic(self):
        for name in ('a', 'b'):
            self.call('record', str(self.root / name), '--demos', '1', '--seed', '22', '--scheme', 'P2')
        files = sorted(path.relative_to(self.root / 'a') for path in (self.root / 'a').rglob('*') if path.is_file())
        self.assertTrue(files)
        for name in files:
            self.assertEqual((self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes())

    def test_record_keeps_existing_banks(self):
        bank_path = self.root / 'bank'
        self.call('record', str(bank_path), '--demos', '1', '--seed', '21', '--scheme', 'P1')
        with self.assertRaises(CommandError):
            self.call('record', str(bank_path), '--demos', '1', '--seed', '21')
        self.assertEqual(len(storage.load(bank_path)), 1)
        self.call('record', str(bank_path), '--demos', '1', '--seed', '21', '--overwrite')
        self.assertEqual(len(storage.load(bank_path)), 3)

    def test_errors_become_command_errors(self):
        with self.assertRaises(CommandError):
            self.call('build_graph', str(self.root / 'missing'), str(self.root / 'graph.json'))
        config = self.root / 'config.json'
        config.write_text(json.dumps({'suite': 'goal'}))
        with self.assertRaises(CommandError):
            self.call('eval_sim', '--config', str(config))

    def test_eval_sim_writes_tables(self):
        config = self.root / 'config.json'
        config.write_text(json.dumps({'demo_counts': [3], 'episodes': 2, 'score_kinds': ['fs']}))
        output = self.call('eval_sim', '--config', str(config), '--out', str(self.root / 'out'))
        self.assertIn('eval_sim_fs.csv', output)
        summary = json.loads((self.root / 'out' / 'eval_sim.json').read_text())
        self.assertEqual(summary['config']['episodes'], 2)
        self.assertTrue((self.root / 'out' / 'eval_sim_fs.csv').exists())

    def test_exp_next_action_writes_tables(self):
        config = self.root / 'config.json'
        config.write_text(json.dumps({'demo_counts': [2], 'episodes': 1, 'score_kinds': ['fs']}))
        output = self.call('exp_next_action', '--config', str(config), '--out', str(self.root / 'out'))
        self.assertIn('next_action_fs.csv', output)
        summary = json.loads((self.root / 'out' / 'next_action.json').read_text())
        self.assertEqual(summary['experiment'], 'next_action')
        self.assertEqual(set(summary['extras']['alignment_failures']), {'fs'})


@unittest.skipUnless(settings.SLOW_TESTS, 'set DEMOGRAPH_SLOW_TESTS=1 to run the trend reproductions')
class TrendReproductionTests(SimpleTestCase):
    def assert_trends(self, suite, **overrides):
        result = run_suite(ExperimentConfig.from_settings(suite, **overrides))
        failed = [check for check in check_trends(result) if not check.passed]
        self.assertEqual(failed, [])

    def test_multipart(self):
        self.assert_trends(Suite.MULTIPART, schemes=('P1', 'P3'), demo_counts=(5, 20))

    def test_goal(self):
        self.assert_trends(Suite.GOAL)

    def test_crosstask(self):
        self.assert_trends(Suite.CROSSTASK, demo_counts=(0, 20))

    def test_similarity(self):
        self.assert_trends(Suite.SIMILARITY, demo_counts=(30,))

    def test_next_action(self):
        self.assert_trends(Suite.NEXT_ACTION)

    def test_stage_table(self):
        self.assert_trends(Suite.STAGE_TABLE)
