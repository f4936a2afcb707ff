"""
Errors raised across demograph.

Every error is a DRF ``APIException``: ``detail`` is an ``ErrorDetail`` message carrying the
machine readable code, both defaulting to class attributes.
"""
from rest_framework.exceptions import APIException


class DemographError(APIException):
    default_detail = 'A demograph error occurred.'
    default_code = 'error'

    @property
    def code(self):
        return self.detail.code


# Frames and camera

class InvalidFrame(DemographError):
    default_detail = 'Frame arrays are inconsistent.'
    default_code = 'invalid_frame'


class InvalidDepth(DemographError):
    default_detail = 'Pixel has no valid depth.'
    default_code = 'invalid_depth'


class OutOfBounds(DemographError):
    default_detail = 'Pixel lies outside the image.'
    default_code = 'out_of_bounds'


class BehindCamera(DemographError):
    default_detail = 'Point lies behind the camera.'
    default_code = 'behind_camera'


# Pose estimation and correspondence

class EmptyMask(DemographError):
    default_detail = 'No masked pixel survived validity filtering.'
    default_code = 'empty_mask'


class TooFewPoints(DemographError):
    default_detail = 'At least three correspondences are required.'
    default_code = 'too_few_points'


class DegenerateConfiguration(DemographError):
    default_detail = 'Correspondences are collinear or coincident.'
    default_code = 'degenerate_configuration'


class NoConsensus(DemographError):
    default_detail = 'RANSAC found no inlier set of at least three points.'
    default_code = 'no_consensus'


class NoKeypoints(DemographError):
    default_detail = 'Fewer than three keypoints were detected.'
    default_code = 'no_keypoints'


class StateMismatch(DemographError):
    default_detail = 'Frame was not rendered from the supplied scene.'
    default_code = 'state_mismatch'


class ZeroVector(DemographError):
    default_detail = 'Embedding has zero norm.'
    default_code = 'zero_vector'


# Simulator

class PlacementFailure(DemographError):
    default_detail = 'Could not place all objects without overlap.'
    default_code = 'placement_failure'


class WorkspaceViolation(DemographError):
    default_detail = 'End-effector pose leaves the workspace.'
    default_code = 'workspace_violation'


class ScriptFailure(DemographError):
    default_detail = 'Scripted demonstrator could not complete the task.'
    default_code = 'script_failure'


# Demonstration bank

class MissingStageLabels(DemographError):
    default_detail = 'Trajectory carries no usable stage labels.'
    default_code = 'missing_stage_labels'


class FormatVersionMismatch(DemographError):
    default_detail = 'Bank was written with an unsupported format version.'
    default_code = 'format_version_mismatch'


class CorruptArray(DemographError):
    default_detail = 'Array file size disagrees with the manifest.'
    default_code = 'corrupt_array'


class BankExists(DemographError):
    default_detail = 'A bank already exists at the target path.'
    default_code = 'bank_exists'


class EmptyBank(DemographError):
    default_detail = 'Memory bank holds no parts.'
    default_code = 'empty_bank'


# Planning

class NoPath(DemographError):
    default_detail = 'GOAL is unreachable from LIVE.'
    default_code = 'no_path'
