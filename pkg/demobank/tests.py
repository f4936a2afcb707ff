import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers

from core.camera import CameraIntrinsics, Frame
from core.exceptions import BankExists, CorruptArray, FormatVersionMismatch, MissingStageLabels
from core.geometry import Action, Gripper, RigidTransform
from demobank.parts import (
    DemoPart, Keyframe, MemoryBank, Scheme, Stage, build_bank, first_frame, first_keyframe, last_frame,
    last_keyframe, segment,
)
from demobank.storage import load, save
from simulator.scripted import scripted_demo
from simulator.shapes import Shape
from simulator.world import SceneConfig, SceneObject, TaskKind, make_task

INTRINSICS = CameraIntrinsics(10.0, 12.0, 4.5, 3.5, 9, 7)


def random_keyframe(rng, stage=Stage.LOCALIZE):
    ids = rng.integers(0, 4, size=(7, 9)).astype(np.int32)
    frame = Frame(
        rgb=rng.uniform(size=(7, 9, 3)),
        depth=rng.uniform(0.1, 0.5, size=(7, 9)),
        object_ids=ids,
        intrinsics=INTRINSICS,
        camera_pose=RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3)),
        scene_digest=f'{rng.integers(1 << 30):x}',
    )
    objects = (SceneObject(2, Shape.TRAPEZE, RigidTransform.from_yaw(rng.uniform(-3, 3), rng.normal(size=3)),
                           rng.uniform(size=3)),)
    action = Action(RigidTransform.from_rotvec(rng.normal(scale=0.1, size=3), rng.normal(scale=0.01, size=3)),
                    rng.choice([Gripper.OPEN, Gripper.CLOSE, Gripper.HOLD]))
    return Keyframe.annotate(frame, action, int(rng.integers(0, 4)), stage, objects)


def random_bank(seed, demos=2, scheme=Scheme.P3):
    rng = np.random.default_rng(seed)
    count = {Scheme.P1: 1, Scheme.P2: 2, Scheme.P3: 3}[scheme]
    parts = []
    for demo in range(demos):
        for index in range(count):
            parts.append(DemoPart(
                part_id=f'demo{demo}-{scheme.value}-{index}',
                task_tag='shape_sorting:trapeze',
                stage_index=index,
                keyframes=tuple(random_keyframe(rng) for _ in range(int(rng.integers(1, 4)))),
                source_demo_id=f'demo{demo}',
                stage_count=count,
                scheme=scheme,
            ))
    return MemoryBank(tuple(parts))


class SegmentTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        config = SceneConfig.from_settings()
        cls.trajectory = scripted_demo(make_task(TaskKind.SHAPE_SORTING, Shape.TRAPEZE, config), 21, config)

    def test_three_parts(self):
        parts = segment(self.trajectory, Scheme.P3)
        self.assertEqual([part.stage_index for part in parts], [0, 1, 2])
        self.assertEqual({part.stage_count for part in parts}, {3})
        self.assertTrue(parts[-1].is_terminal)
        self.assertEqual(parts[0].part_id, 'shape_sorting-trapeze-21-P3-0')
        self.assertEqual(parts[0].task_tag, 'shape_sorting:trapeze')

    def test_one_part_is_whole_trajectory(self):
        (part,) = segment(self.trajectory, Scheme.P1)
        self.assertEqual(part.keyframes, self.trajectory.keyframes)

    def test_parts_partition_the_trajectory(self):
        for scheme in Scheme:
            parts = segment(self.trajectory, scheme)
            joined = tuple(keyframe for part in parts for keyframe in part.keyframes)
            self.assertEqual(joined, self.trajectory.keyframes)

    def test_two_part_cut_after_grasp(self):
        first, second = segment(self.trajectory, Scheme.P2)
        self.assertEqual(last_keyframe(first).action.gripper, Gripper.CLOSE)
        self.assertTrue(all(keyframe.stage == Stage.PLACE for keyframe in second.keyframes))

    def test_foreground_masks_nonempty_at_ends(self):
        for part in segment(self.trajectory, Scheme.P3):
            self.assertTrue(first_keyframe(part).foreground_mask.any())
            self.assertTrue(last_keyframe(part).foreground_mask.any())

    def test_missing_labels(self):
        keyframes = list(self.trajectory.keyframes)
        keyframes[2] = replace(keyframes[2], stage='')
        with self.assertRaises(MissingStageLabels):
            segment(replace(self.trajectory, keyframes=tuple(keyframes)), Scheme.P3)
        with self.assertRaises(MissingStageLabels):
            segment(replace(self.trajectory, keyframes=self.trajectory.keyframes[::-1]), Scheme.P2)

    def test_build_bank(self):
        bank = build_bank([self.trajectory], Scheme.P2)
        self.assertEqual(len(bank), 2)
        self.assertEqual(bank.source_demo_ids, ['shape_sorting-trapeze-21'])


class PartTests(SimpleTestCase):
    def test_endpoints(self):
        rng = np.random.default_rng(0)
        single = DemoPart('a', 't', 0, (random_keyframe(rng),), 'd')
        self.assertEqual(first_frame(single), last_frame(single))
        triple = DemoPart('b', 't', 0, tuple(random_keyframe(rng) for _ in range(3)), 'd')
        self.assertNotEqual(first_frame(triple), last_frame(triple))

    def test_invalid_parts(self):
        rng = np.random.default_rng(1)
        with self.assertRaises(ValueError):
            DemoPart('a', 't', 0, (), 'd')
        with self.assertRaises(ValueError):
            DemoPart('a', 't', 3, (random_keyframe(rng),), 'd', stage_count=3)
        part = DemoPart('a', 't', 0, (random_keyframe(rng),), 'd')
        with self.assertRaises(ValueError):
            MemoryBank((part, part))

    def test_mask_must_match_frame(self):
        keyframe = random_keyframe(np.random.default_rng(2))
        with self.assertRaises(ValueError):
            Keyframe(keyframe.frame, keyframe.action, np.ones((3, 3), dtype=bool), 1)


class StorageTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name) / 'bank'

    def tearDown(self):
        self.directory.cleanup()

    def test_round_trip_is_exact(self):
        for seed in range(5):
            bank = random_bank(seed)
            save(bank, self.root, overwrite=True)
            self.assertEqual(load(self.root), bank)

    def test_bytes_round_trip(self):
        bank = random_bank(7)
        save(bank, self.root)
        part = bank.parts[0]
        content = (self.root / part.part_id / 'kf000_depth.f32').read_bytes()
        self.assertEqual(content, part.keyframes[0].frame.depth.astype('<f4').tobytes())
        loaded = load(self.root)
        self.assertEqual(loaded.parts[0].keyframes[0].frame.rgb.tobytes(), part.keyframes[0].frame.rgb.tobytes())

    def test_empty_bank(self):
        save(MemoryBank(), self.root)
        self.assertEqual([path.name for path in self.root.iterdir()], ['manifest.json'])
        self.assertEqual(len(load(self.root)), 0)

    def test_one_directory_per_part(self):
        save(random_bank(3, demos=20), self.root)
        self.assertEqual(sum(path.is_dir() for path in self.root.iterdir()), 60)

    def test_overwrite_replaces_bank(self):
        save(random_bank(1, demos=3), self.root)
        smaller = random_bank(2, demos=1, scheme=Scheme.P1)
        with self.assertLogs('demobank.storage', 'INFO') as logs:
            save(smaller, self.root, overwrite=True)
        self.assertIn(f'replacing the bank at {self.root}', logs.output[0])
        self.assertEqual(load(self.root), smaller)
        self.assertEqual(sorted(path.name for path in self.root.iterdir()), ['demo0-P1-0', 'manifest.json'])
        self.assertEqual([path.name for path in self.root.parent.iterdir()], ['bank'])

    def test_existing_bank_needs_overwrite(self):
        first = random_bank(1, demos=2)
        save(first, self.root)
        with self.assertRaises(BankExists):
            save(random_bank(2, demos=1), self.root)
        self.assertEqual(load(self.root), first)
        self.assertEqual([path.name for path in self.root.parent.iterdir()], ['bank'])

    def test_format_version_mismatch(self):
        save(random_bank(4), self.root)
        manifest = json.loads((self.root / 'manifest.json').read_text())
        manifest['format_version'] = 2
        (self.root / 'manifest.json').write_text(json.dumps(manifest))
        with self.assertRaises(FormatVersionMismatch):
            load(self.root)

    def test_truncated_array(self):
        bank = random_bank(5)
        save(bank, self.root)
        path = self.root / bank.parts[1].part_id / 'kf000_rgb.f32'
        path.write_bytes(path.read_bytes()[:-4])
        with self.assertRaises(CorruptArray):
            load(self.root)

    def test_manifest_records_cuts(self):
        bank = random_bank(6)
        save(bank, self.root)
        manifest = json.loads((self.root / bank.parts[1].part_id / 'manifest.json').read_text())
        self.assertEqual(manifest['scheme'], 'P3')
        self.assertEqual(manifest['cut_stages'], ['reorient'])
        self.assertEqual(manifest['keyframes'][0]['rgb'], {'file': 'kf000_rgb.f32', 'dtype': '<f4', 'shape': [7, 9, 3]})

    def test_malformed_manifest(self):
        save(random_bank(8), self.root)
        (self.root / 'manifest.json').write_text('{"format_version": 1, "parts": ["a", "a"]}')
        with self.assertRaises(serializers.ValidationError):
            load(self.root)

    def test_scripted_bank_round_trip(self):
        config = SceneConfig.from_settings()
        trajectory = scripted_demo(make_task(TaskKind.PICK_AND_PLACE, Shape.OVAL, config), 4, config)
        bank = build_bank([trajectory], Scheme.P3)
        save(bank, self.root)
        self.assertEqual(load(self.root), bank)
