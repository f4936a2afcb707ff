from rest_framework import serializers

from core.serializers import CameraIntrinsicsSerializer, RigidTransformSerializer
from simulator.shapes import GRASPABLE, Shape
from simulator.world import SceneConfig, SceneObject, TaskKind, TaskSpec


def _vector(length, **kwargs):
    return serializers.ListField(child=serializers.FloatField(), min_length=length, max_length=length, **kwargs)


class SceneConfigSerializer(serializers.Serializer):
    """Scene/task configuration file; every key is optional and falls back to the settings defaults."""
    intrinsics = CameraIntrinsicsSerializer(required=False)
    home_position = _vector(3, required=False)
    home_yaw = serializers.FloatField(required=False)
    workspace_min = _vector(3, required=False)
    workspace_max = _vector(3, required=False)
    placement_min = _vector(2, required=False)
    placement_max = _vector(2, required=False)
    clearance = serializers.FloatField(min_value=0, required=False)
    max_step_translation = serializers.FloatField(min_value=0, required=False)
    max_step_rotation = serializers.FloatField(min_value=0, required=False)
    grasp_radius = serializers.FloatField(min_value=0, required=False)
    grasp_offset = _vector(3, required=False)
    lift_height = serializers.FloatField(required=False)
    fixture_position = _vector(2, required=False)
    shapes = serializers.ListField(
        child=serializers.ChoiceField(choices=[(s.value, s.label) for s in GRASPABLE]),
        allow_empty=False, required=False,
    )
    position_tolerance = serializers.FloatField(min_value=0, required=False)
    orientation_tolerance = serializers.FloatField(min_value=0, required=False)
    pad_tolerance = serializers.FloatField(min_value=0, required=False)
    texture_seed = serializers.IntegerField(required=False)
    texture_cell = serializers.FloatField(min_value=0, required=False)
    keyframe_translation = serializers.FloatField(min_value=0, required=False)
    keyframe_rotation = serializers.FloatField(min_value=0, required=False)
    min_foreground_pixels = serializers.IntegerField(min_value=1, required=False)

    def validate(self, attrs):
        for low, high in (('workspace_min', 'workspace_max'), ('placement_min', 'placement_max')):
            if low in attrs and high in attrs and any(a >= b for a, b in zip(attrs[low], attrs[high])):
                raise serializers.ValidationError(f'{low} must lie below {high}.')
        if len(set(attrs.get('shapes', []))) != len(attrs.get('shapes', [])):
            raise serializers.ValidationError('shapes must be distinct.')
        for name in ('position_tolerance', 'orientation_tolerance', 'pad_tolerance', 'texture_cell'):
            if name in attrs and attrs[name] <= 0:
                raise serializers.ValidationError(f'{name} must be positive.')
        return attrs

    def to_representation(self, instance):
        data = {}
        for name in self.fields:
            value = getattr(instance, name)
            if name == 'intrinsics':
                value = CameraIntrinsicsSerializer(value).data
            elif name == 'shapes':
                value = [str(shape.value) for shape in value]
            elif isinstance(value, tuple):
                value = list(value)
            data[name] = value
        return data

    def create(self, validated_data):
        values = dict(validated_data)
        if 'intrinsics' in values:
            values['intrinsics'] = CameraIntrinsicsSerializer().create(values['intrinsics'])
        for name, value in values.items():
            if isinstance(value, list):
                values[name] = tuple(value)
        return SceneConfig.from_settings(**values)


class SceneObjectSerializer(serializers.Serializer):
    id = serializers.IntegerField(min_value=1)
    shape = serializers.ChoiceField(choices=Shape.choices)
    pose = RigidTransformSerializer()
    color = _vector(3)
    grasped = serializers.BooleanField()

    def to_representation(self, instance):
        return {
            'id': instance.id,
            'shape': instance.shape.value,
            'pose': RigidTransformSerializer(instance.pose).data,
            'color': list(instance.color),
            'grasped': instance.grasped,
        }

    def create(self, validated_data):
        return SceneObject(
            id=validated_data['id'],
            shape=validated_data['shape'],
            pose=RigidTransformSerializer().create(validated_data['pose']),
            color=tuple(validated_data['color']),
            grasped=validated_data['grasped'],
        )


class TaskSpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=TaskKind.choices)
    target_shape = serializers.ChoiceField(choices=[(s.value, s.label) for s in GRASPABLE])
    goal_pose = RigidTransformSerializer()
    position_tolerance = serializers.FloatField()
    orientation_tolerance = serializers.FloatField()

    def validate(self, attrs):
        if attrs['position_tolerance'] <= 0 or attrs['orientation_tolerance'] <= 0:
            raise serializers.ValidationError('Tolerances must be positive.')
        return attrs

    def to_representation(self, instance):
        return {
            'kind': instance.kind.value,
            'target_shape': instance.target_shape.value,
            'goal_pose': RigidTransformSerializer(instance.goal_pose).data,
            'position_tolerance': instance.position_tolerance,
            'orientation_tolerance': instance.orientation_tolerance,
        }

    def create(self, validated_data):
        return TaskSpec(
            kind=validated_data['kind'],
            target_shape=validated_data['target_shape'],
            goal_pose=RigidTransformSerializer().create(validated_data['goal_pose']),
            position_tolerance=validated_data['position_tolerance'],
            orientation_tolerance=validated_data['orientation_tolerance'],
        )
