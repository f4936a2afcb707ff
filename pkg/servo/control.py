"""
Frame alignment and sequence tracking.

The camera rides on the end effector, so the rigid fit that carries the keyframe's foreground
points (demonstration camera frame) onto the live ones (live camera frame) is directly the
end-effector motion that restores the demonstrated view: ``new_pose = live_pose ∘ fit``.
"""
import logging
from dataclasses import dataclass, field

from django.db import models

from core.exceptions import (
    DegenerateConfiguration, EmptyMask, NoConsensus, NoKeypoints, StateMismatch, TooFewPoints, WorkspaceViolation,
)
from core.geometry import Action, Gripper, RigidTransform, TransformMagnitude, clamp_delta, magnitude
from correspondence.backends import lift
from pose.estimation import Fitter, RansacConfig, fit_rigid
from simulator.render import render
from simulator.world import step

logger = logging.getLogger(__name__)

ALIGNMENT_ERRORS = (EmptyMask, TooFewPoints, NoConsensus, DegenerateConfiguration, NoKeypoints, StateMismatch)

# before a gripper command, residuals above this share of the thresholds are corrected once more
SETTLE_FRACTION = 0.1


@dataclass(frozen=True)
class ServoConfig:
    trans_threshold: float = 0.01
    rot_threshold: float = 0.05
    max_steps_per_keyframe: int = 10
    gain: float = 1.0
    fitter: str = Fitter.PLAIN
    ransac: RansacConfig = field(default_factory=RansacConfig)
    max_step_translation: float = 0.02
    max_step_rotation: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'fitter', Fitter(self.fitter))
        if self.trans_threshold <= 0 or self.rot_threshold <= 0:
            raise ValueError('thresholds must be positive')
        if self.max_steps_per_keyframe < 1:
            raise ValueError('max_steps_per_keyframe must be at least 1')
        if not 0 < self.gain <= 1:
            raise ValueError('gain must lie in (0, 1]')
        if self.max_step_translation <= 0 or self.max_step_rotation <= 0:
            raise ValueError('step limits must be positive')

    @classmethod
    def from_settings(cls, **overrides):
        from django.conf import settings

        values = {
            'trans_threshold': settings.SERVO['TRANS_THRESHOLD'],
            'rot_threshold': settings.SERVO['ROT_THRESHOLD'],
            'max_steps_per_keyframe': settings.SERVO['MAX_STEPS_PER_KEYFRAME'],
            'gain': settings.SERVO['GAIN'],
            'fitter': settings.SERVO['FITTER'],
            'ransac': RansacConfig.from_settings(),
            'max_step_translation': settings.SIMULATOR['MAX_STEP_TRANSLATION'],
            'max_step_rotation': settings.SIMULATOR['MAX_STEP_ROTATION'],
        }
        values.update(overrides)
        return cls(**values)


class StepKind(models.TextChoices):
    CORRECTIVE = 'corrective', 'Corrective'
    GRIPPER = 'gripper', 'Gripper'


class KeyframeFailure(models.TextChoices):
    NONE = '', 'None'
    MAX_STEPS = 'max_steps', 'Step budget exhausted'
    WORKSPACE = 'workspace_violation', 'Workspace violation'


@dataclass(frozen=True)
class StepRecord:
    """One ``step()`` call. Gripper replays carry a zero residual and no fit."""
    part_id: str
    keyframe_index: int
    kind: str
    residual: TransformMagnitude
    commanded: TransformMagnitude
    gripper: str = Gripper.HOLD
    fit: object = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', StepKind(self.kind))
        object.__setattr__(self, 'gripper', Gripper(self.gripper))


@dataclass(frozen=True)
class KeyframeResult:
    part_id: str
    keyframe_index: int
    converged: bool
    steps: int
    # an error code from core.exceptions or a KeyframeFailure value
    failure: str = ''
    residual: TransformMagnitude = None

    @property
    def flagged(self):
        return not self.converged


def frame_align(live, target, backend, cfg=None, live_objects=()):
    """
    Corrective end-effector action towards ``target`` and the rigid fit behind it.

    Correspondences come from ``backend`` restricted to the keyframe's foreground mask; the fit is
    scaled by the gain and clamped to the per-step limits. The gripper is held.
    """
    cfg = cfg or ServoConfig.from_settings()
    mask = target.foreground_mask
    if not mask.any():
        raise EmptyMask(f'Keyframe of object {target.foreground_object_id} has an empty mask.')
    result = backend.correspond(target.frame, live, mask, target.objects, live_objects)
    corrs = lift(target.frame, live, mask, result)
    fit = fit_rigid(corrs, cfg.fitter, cfg.ransac)
    delta = clamp_delta(fit.transform.scaled(cfg.gain), cfg.max_step_translation, cfg.max_step_rotation)
    return Action(delta, Gripper.HOLD), fit


def _track_keyframe(state, part_id, index, keyframe, backend, cfg, rows):
    steps = 0
    settle = keyframe.action.gripper != Gripper.HOLD
    while True:
        live = render(state)
        try:
            action, fit = frame_align(live, keyframe, backend, cfg, state.objects)
        except ALIGNMENT_ERRORS as exc:
            logger.debug('%s keyframe %d: alignment failed (%s)', part_id, index, exc.code)
            return state, KeyframeResult(part_id, index, False, steps, exc.code)

        residual = magnitude(fit.transform)
        reached = residual.below(cfg.trans_threshold, cfg.rot_threshold)
        if reached and (not settle or residual.below(cfg.trans_threshold * SETTLE_FRACTION,
                                                     cfg.rot_threshold * SETTLE_FRACTION)):
            return state, KeyframeResult(part_id, index, True, steps, residual=residual)
        # the settling step counts against the budget too
        if steps >= cfg.max_steps_per_keyframe:
            logger.debug('%s keyframe %d: no convergence in %d steps (%.4f m, %.4f rad)',
                         part_id, index, steps, residual.translation_norm, residual.rotation_angle)
            return state, KeyframeResult(part_id, index, False, steps, KeyframeFailure.MAX_STEPS, residual)
        if reached:
            settle = False
        try:
            state = step(state, action)
        except WorkspaceViolation:
            return state, KeyframeResult(part_id, index, False, steps, KeyframeFailure.WORKSPACE, residual)
        rows.append(StepRecord(part_id, index, StepKind.CORRECTIVE, residual, magnitude(action.delta), fit=fit))
        steps += 1


def sequence_track(state, part, backend, cfg=None):
    """
    Servo through every keyframe of ``part``, replaying its gripper commands.

    A keyframe is reached once both the residual translation and rotation fall below the
    thresholds. Keyframes that fail or run out of steps are flagged and skipped, never raised.
    Returns the new state, one ``StepRecord`` per ``step()`` call and one ``KeyframeResult`` per
    keyframe.
    """
    cfg = cfg or ServoConfig.from_settings()
    rows, results = [], []
    for index, keyframe in enumerate(part.keyframes):
        state, result = _track_keyframe(state, part.part_id, index, keyframe, backend, cfg, rows)
        results.append(result)
        gripper = keyframe.action.gripper
        if gripper != Gripper.HOLD:
            state = step(state, Action(RigidTransform.identity(), gripper))
            rows.append(StepRecord(part.part_id, index, StepKind.GRIPPER, TransformMagnitude(), TransformMagnitude(),
                                   gripper))
    flagged = sum(result.flagged for result in results)
    logger.debug('tracked %s: %d steps, %d of %d keyframes flagged', part.part_id, len(rows), flagged, len(results))
    return state, rows, results
