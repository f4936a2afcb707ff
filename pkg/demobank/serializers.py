from rest_framework import serializers

from core.serializers import ActionSerializer, CameraIntrinsicsSerializer, RigidTransformSerializer
from demobank.parts import FORMAT_VERSION, Scheme, Stage
from simulator.serializers import SceneObjectSerializer


class ArraySpecSerializer(serializers.Serializer):
    """Where a raw array lives and how to read it back."""
    DTYPES = (('<f4', '32-bit float'), ('<i4', '32-bit int'), ('|u1', '8-bit unsigned'))

    file = serializers.RegexField(r'^[A-Za-z0-9_.-]+$')
    dtype = serializers.ChoiceField(choices=DTYPES)
    shape = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=2, max_length=3)


class KeyframeManifestSerializer(serializers.Serializer):
    index = serializers.IntegerField(min_value=0)
    stage = serializers.ChoiceField(choices=Stage.choices, allow_blank=True)
    foreground_object_id = serializers.IntegerField(min_value=0)
    action = ActionSerializer()
    intrinsics = CameraIntrinsicsSerializer()
    camera_pose = RigidTransformSerializer()
    scene_digest = serializers.CharField(allow_blank=True)
    objects = SceneObjectSerializer(many=True)
    rgb = ArraySpecSerializer()
    depth = ArraySpecSerializer()
    object_ids = ArraySpecSerializer()
    foreground_mask = ArraySpecSerializer()

    def validate(self, attrs):
        height, width = attrs['depth']['shape'][:2]
        if (attrs['intrinsics']['height'], attrs['intrinsics']['width']) != (height, width):
            raise serializers.ValidationError('Array dimensions disagree with the intrinsics.')
        expected = {'rgb': [height, width, 3], 'depth': [height, width],
                    'object_ids': [height, width], 'foreground_mask': [height, width]}
        for name, shape in expected.items():
            if list(attrs[name]['shape']) != shape:
                raise serializers.ValidationError(f'{name} must have shape {shape}.')
        return attrs


class PartManifestSerializer(serializers.Serializer):
    format_version = serializers.IntegerField()
    part_id = serializers.CharField()
    task_tag = serializers.CharField(allow_blank=True)
    stage_index = serializers.IntegerField(min_value=0)
    stage_count = serializers.IntegerField(min_value=1)
    scheme = serializers.ChoiceField(choices=Scheme.choices)
    cut_stages = serializers.ListField(child=serializers.ChoiceField(choices=Stage.choices))
    source_demo_id = serializers.CharField()
    keyframes = KeyframeManifestSerializer(many=True, allow_empty=False)

    def validate(self, attrs):
        if attrs['stage_index'] >= attrs['stage_count']:
            raise serializers.ValidationError('stage_index must be below stage_count.')
        if [keyframe['index'] for keyframe in attrs['keyframes']] != list(range(len(attrs['keyframes']))):
            raise serializers.ValidationError('Keyframe indices must run 0, 1, 2, ...')
        return attrs


class BankManifestSerializer(serializers.Serializer):
    format_version = serializers.IntegerField()
    parts = serializers.ListField(child=serializers.RegexField(r'^[A-Za-z0-9_.:-]+$'))

    def validate_parts(self, value):
        if len(value) != len(set(value)):
            raise serializers.ValidationError('Part ids must be unique.')
        return value


def bank_manifest(bank):
    return {'format_version': FORMAT_VERSION, 'parts': [part.part_id for part in bank]}
