"""
On-disk memory banks.

See FORMAT.md at the repository root for the layout. Saving writes the whole bank into a sibling
temporary directory and swaps it into place, so readers never see a half-written bank.
"""
import logging
import shutil
import tempfile
from pathlib import Path

import numpy as np
from rest_framework import serializers

from core.camera import Frame
from core.exceptions import BankExists, CorruptArray, FormatVersionMismatch
from core.serializers import (
    ActionSerializer, CameraIntrinsicsSerializer, RigidTransformSerializer, parse_json, render_json,
)
from demobank.parts import FORMAT_VERSION, SCHEME_CUTS, DemoPart, Keyframe, MemoryBank
from demobank.serializers import BankManifestSerializer, PartManifestSerializer, bank_manifest
from simulator.serializers import SceneObjectSerializer

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'

# name -> (file suffix, little-endian dtype)
ARRAYS = {
    'rgb': ('rgb.f32', '<f4'),
    'depth': ('depth.f32', '<f4'),
    'object_ids': ('ids.i32', '<i4'),
    'foreground_mask': ('mask.u8', '|u1'),
}


def _keyframe_arrays(keyframe):
    frame = keyframe.frame
    return {
        'rgb': frame.rgb,
        'depth': frame.depth,
        'object_ids': frame.object_ids,
        'foreground_mask': keyframe.foreground_mask,
    }


def _write_part(part, directory):
    directory.mkdir()
    keyframes = []
    for index, keyframe in enumerate(part.keyframes):
        entry = {
            'index': index,
            'stage': str(keyframe.stage),
            'foreground_object_id': int(keyframe.foreground_object_id),
            'action': ActionSerializer(keyframe.action).data,
            'intrinsics': CameraIntrinsicsSerializer(keyframe.frame.intrinsics).data,
            'camera_pose': RigidTransformSerializer(keyframe.frame.camera_pose).data,
            'scene_digest': keyframe.frame.scene_digest,
            'objects': SceneObjectSerializer(keyframe.objects, many=True).data,
        }
        for name, array in _keyframe_arrays(keyframe).items():
            suffix, dtype = ARRAYS[name]
            filename = f'kf{index:03d}_{suffix}'
            (directory / filename).write_bytes(np.ascontiguousarray(array, dtype=dtype).tobytes(order='C'))
            entry[name] = {'file': filename, 'dtype': dtype, 'shape': list(array.shape)}
        keyframes.append(entry)

    manifest = {
        'format_version': FORMAT_VERSION,
        'part_id': part.part_id,
        'task_tag': part.task_tag,
        'stage_index': part.stage_index,
        'stage_count': part.stage_count,
        'scheme': part.scheme.value,
        'cut_stages': [str(stage) for stage in SCHEME_CUTS[part.scheme][part.stage_index]]
        if part.stage_count == len(SCHEME_CUTS[part.scheme]) else [],
        'source_demo_id': part.source_demo_id,
        'keyframes': keyframes,
    }
    (directory / MANIFEST).write_bytes(render_json(manifest))


def save(bank, root_path, overwrite=False):
    """Write ``bank`` under ``root_path``; an existing bank there is only replaced with ``overwrite``."""
    root = Path(root_path)
    if root.exists() and not overwrite:
        raise BankExists(f'{root} already exists; pass overwrite to replace it.')
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f'.{root.name}-', dir=root.parent))
    try:
        for part in bank:
            _write_part(part, staging / part.part_id)
        (staging / MANIFEST).write_bytes(render_json(bank_manifest(bank)))
        if root.exists():
            logger.info('replacing the bank at %s', root)
            retired = Path(tempfile.mkdtemp(prefix=f'.{root.name}-old-', dir=root.parent))
            root.rename(retired / root.name)
            staging.rename(root)
            shutil.rmtree(retired)
        else:
            staging.rename(root)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info('saved %d parts to %s', len(bank), root)


def _read_manifest(path, serializer_class):
    data = parse_json(path.read_bytes())
    version = data.get('format_version') if isinstance(data, dict) else None
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f'{path} has format version {version}, expected {FORMAT_VERSION}.')
    serializer = serializer_class(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data


def _read_array(directory, spec):
    path = directory / spec['file']
    expected_dtype = np.dtype(spec['dtype'])
    try:
        content = path.read_bytes()
    except FileNotFoundError as exc:
        raise CorruptArray(f'{path} is missing.') from exc
    count = int(np.prod(spec['shape']))
    if len(content) != count * expected_dtype.itemsize:
        raise CorruptArray(f'{path} holds {len(content)} bytes, the manifest expects {count * expected_dtype.itemsize}.')
    return np.frombuffer(content, dtype=expected_dtype).reshape(spec['shape'])


def _read_part(directory):
    manifest = _read_manifest(directory / MANIFEST, PartManifestSerializer)
    keyframes = []
    for entry in manifest['keyframes']:
        for name, (_, dtype) in ARRAYS.items():
            if entry[name]['dtype'] != dtype:
                raise CorruptArray(f'{name} of keyframe {entry["index"]} must be stored as {dtype}.')
        frame = Frame(
            rgb=_read_array(directory, entry['rgb']),
            depth=_read_array(directory, entry['depth']),
            object_ids=_read_array(directory, entry['object_ids']),
            intrinsics=CameraIntrinsicsSerializer().create(entry['intrinsics']),
            camera_pose=RigidTransformSerializer().create(entry['camera_pose']),
            scene_digest=entry['scene_digest'],
        )
        keyframes.append(Keyframe(
            frame=frame,
            action=ActionSerializer().create(entry['action']),
            foreground_mask=_read_array(directory, entry['foreground_mask']).astype(bool),
            foreground_object_id=entry['foreground_object_id'],
            stage=entry['stage'],
            objects=tuple(SceneObjectSerializer().create(obj) for obj in entry['objects']),
        ))
    return DemoPart(
        part_id=manifest['part_id'],
        task_tag=manifest['task_tag'],
        stage_index=manifest['stage_index'],
        keyframes=tuple(keyframes),
        source_demo_id=manifest['source_demo_id'],
        stage_count=manifest['stage_count'],
        scheme=manifest['scheme'],
    )


def load(root_path):
    root = Path(root_path)
    manifest = _read_manifest(root / MANIFEST, BankManifestSerializer)
    parts = []
    for part_id in manifest['parts']:
        part = _read_part(root / part_id)
        if part.part_id != part_id:
            raise serializers.ValidationError(f'Directory {part_id} holds part {part.part_id}.')
        parts.append(part)
    logger.info('loaded %d parts from %s', len(parts), root)
    return MemoryBank(tuple(parts))
