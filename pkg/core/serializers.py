import io
import math

from rest_framework import serializers
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from core.camera import CameraIntrinsics
from core.geometry import Action, Gripper, RigidTransform, TransformMagnitude


class RigidTransformSerializer(serializers.Serializer):
    quaternion = serializers.ListField(child=serializers.FloatField(), min_length=4, max_length=4)
    translation = serializers.ListField(child=serializers.FloatField(), min_length=3, max_length=3)

    def to_representation(self, instance):
        return {'quaternion': list(instance.quaternion), 'translation': list(instance.translation)}

    def validate_quaternion(self, value):
        if math.sqrt(sum(v * v for v in value)) < 1e-12:
            raise serializers.ValidationError('Quaternion must be non-zero.')
        return value

    def create(self, validated_data):
        return RigidTransform(tuple(validated_data['quaternion']), tuple(validated_data['translation']))


class CameraIntrinsicsSerializer(serializers.Serializer):
    fx = serializers.FloatField(min_value=0)
    fy = serializers.FloatField(min_value=0)
    cx = serializers.FloatField()
    cy = serializers.FloatField()
    width = serializers.IntegerField(min_value=1)
    height = serializers.IntegerField(min_value=1)

    def validate(self, attrs):
        if attrs['fx'] <= 0 or attrs['fy'] <= 0:
            raise serializers.ValidationError('Focal lengths must be positive.')
        if not (0 <= attrs['cx'] < attrs['width'] and 0 <= attrs['cy'] < attrs['height']):
            raise serializers.ValidationError('Principal point must lie inside the image.')
        return attrs

    def create(self, validated_data):
        return CameraIntrinsics(**validated_data)


class ActionSerializer(serializers.Serializer):
    delta = RigidTransformSerializer()
    gripper = serializers.ChoiceField(choices=Gripper.choices)

    def to_representation(self, instance):
        return {
            'delta': RigidTransformSerializer(instance.delta).data,
            'gripper': str(instance.gripper),
        }

    def create(self, validated_data):
        delta = RigidTransformSerializer().create(validated_data['delta'])
        return Action(delta=delta, gripper=validated_data['gripper'])


class TransformMagnitudeSerializer(serializers.Serializer):
    translation_norm = serializers.FloatField()
    rotation_angle = serializers.FloatField()

    def create(self, validated_data):
        return TransformMagnitude(**validated_data)


def finite_or_none(value):
    """Strict JSON has no infinities; non-finite scores are written as null."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def render_json(data):
    return JSONRenderer().render(data, renderer_context={'indent': 2})


def parse_json(content):
    if isinstance(content, str):
        content = content.encode('utf-8')
    try:
        return JSONParser().parse(io.BytesIO(content))
    except Exception as exc:
        raise serializers.ValidationError(f'Malformed JSON: {exc}') from exc


def load_instance(serializer_class, data, **kwargs):
    """Validate ``data`` with ``serializer_class`` and build the domain object it describes."""
    serializer = serializer_class(data=data, **kwargs)
    serializer.is_valid(raise_exception=True)
    return serializer.save()
