from rest_framework import serializers

from core.serializers import RigidTransformSerializer, TransformMagnitudeSerializer
from pose.estimation import Fitter, RansacConfig
from planner.serializers import PlanSerializer
from servo.control import ServoConfig
from simulator.serializers import TaskSpecSerializer


class RansacConfigSerializer(serializers.Serializer):
    threshold_m = serializers.FloatField(required=False)
    iterations = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(required=False)

    def validate_threshold_m(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must be positive.')
        return value

    def create(self, validated_data):
        return RansacConfig.from_settings(**validated_data)


class ServoConfigSerializer(serializers.Serializer):
    """Servo block of an experiment config; omitted keys keep their settings defaults."""
    trans_threshold = serializers.FloatField(required=False)
    rot_threshold = serializers.FloatField(required=False)
    max_steps_per_keyframe = serializers.IntegerField(min_value=1, required=False)
    gain = serializers.FloatField(required=False)
    fitter = serializers.ChoiceField(choices=Fitter.choices, required=False)
    ransac = RansacConfigSerializer(required=False)

    def validate(self, attrs):
        for name in ('trans_threshold', 'rot_threshold'):
            if name in attrs and attrs[name] <= 0:
                raise serializers.ValidationError(f'{name} must be positive.')
        if 'gain' in attrs and not 0 < attrs['gain'] <= 1:
            raise serializers.ValidationError('gain must lie in (0, 1].')
        return attrs

    def to_representation(self, instance):
        return {
            'trans_threshold': instance.trans_threshold,
            'rot_threshold': instance.rot_threshold,
            'max_steps_per_keyframe': instance.max_steps_per_keyframe,
            'gain': instance.gain,
            'fitter': instance.fitter.value,
            'ransac': {
                'threshold_m': instance.ransac.threshold_m,
                'iterations': instance.ransac.iterations,
                'seed': instance.ransac.seed,
            },
        }

    def create(self, validated_data):
        values = dict(validated_data)
        if 'ransac' in values:
            values['ransac'] = RansacConfigSerializer().create(values['ransac'])
        return ServoConfig.from_settings(**values)


class FitReportSerializer(serializers.Serializer):
    transform = RigidTransformSerializer()
    rms_residual = serializers.FloatField()
    inlier_count = serializers.IntegerField()
    total_count = serializers.IntegerField()


class StepRecordSerializer(serializers.Serializer):
    part_id = serializers.CharField()
    keyframe_index = serializers.IntegerField()
    kind = serializers.CharField()
    residual = TransformMagnitudeSerializer()
    commanded = TransformMagnitudeSerializer()
    gripper = serializers.CharField()
    fit = FitReportSerializer(allow_null=True)

    def to_representation(self, instance):
        return {
            'part_id': instance.part_id,
            'keyframe_index': instance.keyframe_index,
            'kind': instance.kind.value,
            'residual': TransformMagnitudeSerializer(instance.residual).data,
            'commanded': TransformMagnitudeSerializer(instance.commanded).data,
            'gripper': instance.gripper.value,
            'fit': FitReportSerializer(instance.fit).data if instance.fit is not None else None,
        }


class KeyframeResultSerializer(serializers.Serializer):
    part_id = serializers.CharField()
    keyframe_index = serializers.IntegerField()
    converged = serializers.BooleanField()
    steps = serializers.IntegerField()
    failure = serializers.CharField(allow_blank=True)


class StageOutcomeSerializer(serializers.Serializer):
    correct_position = serializers.BooleanField()
    correct_grasp = serializers.BooleanField()
    correct_orientation = serializers.BooleanField()
    success = serializers.BooleanField()


class EpisodeTraceSerializer(serializers.Serializer):
    task = TaskSpecSerializer()
    seed = serializers.IntegerField()
    plans = PlanSerializer(many=True)
    executed_parts = serializers.ListField(child=serializers.CharField())
    steps = StepRecordSerializer(many=True)
    keyframes = KeyframeResultSerializer(many=True)
    outcome = StageOutcomeSerializer()
    failure = serializers.CharField(allow_blank=True)
