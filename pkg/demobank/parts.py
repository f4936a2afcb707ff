import logging
from dataclasses import dataclass

import numpy as np
from django.db import models

from core.camera import Frame
from core.exceptions import MissingStageLabels
from core.geometry import Action

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Stage(models.TextChoices):
    LOCALIZE = 'localize', 'Localize'
    REORIENT = 'reorient', 'Reorient'
    PLACE = 'place', 'Place'


STAGE_ORDER = (Stage.LOCALIZE, Stage.REORIENT, Stage.PLACE)


class Scheme(models.TextChoices):
    P1 = 'P1', '1-P'
    P2 = 'P2', '2-P'
    P3 = 'P3', '3-P'


# which stage labels each part of a scheme covers
SCHEME_CUTS = {
    Scheme.P1: ((Stage.LOCALIZE, Stage.REORIENT, Stage.PLACE),),
    Scheme.P2: ((Stage.LOCALIZE, Stage.REORIENT), (Stage.PLACE,)),
    Scheme.P3: ((Stage.LOCALIZE,), (Stage.REORIENT,), (Stage.PLACE,)),
}


@dataclass(frozen=True, eq=False)
class Keyframe:
    """
    One recorded state/action pair.

    ``foreground_mask`` marks the pixels of the object the robot moves relative to at this point
    (``foreground_object_id``; 0 stands for the table itself). ``objects`` is the ground-truth scene
    snapshot the frame was rendered from, empty for keyframes recorded outside the simulator.
    """
    frame: Frame
    action: Action
    foreground_mask: np.ndarray
    foreground_object_id: int
    stage: str = ''
    objects: tuple = ()

    def __post_init__(self):
        mask = np.array(self.foreground_mask, dtype=bool, copy=True)
        if mask.shape != self.frame.shape:
            raise ValueError('foreground mask must match the frame size')
        mask.setflags(write=False)
        object.__setattr__(self, 'foreground_mask', mask)
        object.__setattr__(self, 'objects', tuple(self.objects))

    @classmethod
    def annotate(cls, frame, action, foreground_object_id, stage='', objects=()):
        return cls(frame, action, frame.object_ids == foreground_object_id, foreground_object_id, stage, objects)

    def __eq__(self, other):
        if not isinstance(other, Keyframe):
            return NotImplemented
        return (
            self.frame == other.frame
            and self.action == other.action
            and np.array_equal(self.foreground_mask, other.foreground_mask)
            and self.foreground_object_id == other.foreground_object_id
            and self.stage == other.stage
            and self.objects == other.objects
        )

    __hash__ = None


@dataclass(frozen=True)
class DemoPart:
    part_id: str
    task_tag: str
    stage_index: int
    keyframes: tuple
    source_demo_id: str
    # number of parts the source demonstration was cut into; the last one is terminal
    stage_count: int = 1
    scheme: str = Scheme.P1

    def __post_init__(self):
        object.__setattr__(self, 'keyframes', tuple(self.keyframes))
        object.__setattr__(self, 'scheme', Scheme(self.scheme))
        if not self.keyframes:
            raise ValueError(f'part {self.part_id} has no keyframes')
        if not (0 <= self.stage_index < self.stage_count):
            raise ValueError(f'part {self.part_id} has stage {self.stage_index} of {self.stage_count}')

    @property
    def is_terminal(self):
        return self.stage_index == self.stage_count - 1


def first_frame(part):
    return part.keyframes[0].frame


def last_frame(part):
    return part.keyframes[-1].frame


def first_keyframe(part):
    return part.keyframes[0]


def last_keyframe(part):
    return part.keyframes[-1]


@dataclass(frozen=True)
class MemoryBank:
    parts: tuple = ()
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, 'parts', tuple(self.parts))
        ids = [part.part_id for part in self.parts]
        if len(ids) != len(set(ids)):
            raise ValueError('part ids must be unique')

    def __len__(self):
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def get(self, part_id):
        return next(part for part in self.parts if part.part_id == part_id)

    @property
    def source_demo_ids(self):
        return sorted({part.source_demo_id for part in self.parts})

    def merged(self, other):
        return MemoryBank(self.parts + tuple(other.parts), self.format_version)


def demo_id_for(trajectory):
    return f'{trajectory.task.kind.value}-{trajectory.task.target_shape.value}-{trajectory.seed}'


def segment(trajectory, scheme, demo_id=None, task_tag=None):
    """
    Cut a stage-labelled trajectory into the parts of ``scheme``.

    P1 keeps the whole trajectory, P2 cuts once the grasp is complete, P3 additionally cuts once
    the target has been localized.
    """
    scheme = Scheme(scheme)
    keyframes = tuple(trajectory.keyframes)
    labels = [keyframe.stage for keyframe in keyframes]
    if not keyframes or any(label not in STAGE_ORDER for label in labels):
        raise MissingStageLabels(f'Unlabelled keyframes in {len(keyframes)}-keyframe trajectory.')
    order = [STAGE_ORDER.index(Stage(label)) for label in labels]
    if order != sorted(order):
        raise MissingStageLabels('Stage labels are out of order.')

    demo_id = demo_id or demo_id_for(trajectory)
    task_tag = task_tag or f'{trajectory.task.kind.value}:{trajectory.task.target_shape.value}'
    cuts = SCHEME_CUTS[scheme]
    parts = []
    for index, stages in enumerate(cuts):
        selected = tuple(keyframe for keyframe in keyframes if keyframe.stage in stages)
        if not selected:
            raise MissingStageLabels(f'No keyframes labelled {", ".join(stages)}.')
        parts.append(DemoPart(
            part_id=f'{demo_id}-{scheme.value}-{index}',
            task_tag=task_tag,
            stage_index=index,
            keyframes=selected,
            source_demo_id=demo_id,
            stage_count=len(cuts),
            scheme=scheme,
        ))
    logger.debug('segmented %s into %d parts (%s)', demo_id, len(parts), scheme.value)
    return parts


def build_bank(trajectories, scheme):
    parts = []
    for trajectory in trajectories:
        parts.extend(segment(trajectory, scheme))
    return MemoryBank(tuple(parts))
