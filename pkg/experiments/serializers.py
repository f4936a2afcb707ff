from rest_framework import serializers

from core.serializers import finite_or_none
from correspondence.backends import BackendName
from demobank.parts import Scheme
from planner.graph import CombinationMode
from servo.serializers import ServoConfigSerializer
from similarity.scores import ScoreKind
from simulator.serializers import SceneConfigSerializer
from simulator.shapes import GRASPABLE
from simulator.world import TaskKind
from experiments.config import ExperimentConfig, Suite

GRASPABLE_CHOICES = [(shape.value, shape.label) for shape in GRASPABLE]


class BackendSerializer(serializers.Serializer):
    """Correspondence backend block: ``name`` plus whichever parameters that backend takes."""
    name = serializers.ChoiceField(choices=BackendName.choices)
    noise_px = serializers.FloatField(min_value=0, required=False)
    seed = serializers.IntegerField(required=False)
    max_flow_px = serializers.FloatField(required=False, allow_null=True)
    breakdown_fraction = serializers.FloatField(min_value=0, max_value=1, required=False)
    patch = serializers.IntegerField(min_value=0, required=False)
    search = serializers.IntegerField(min_value=0, required=False)
    ssd_ceiling = serializers.FloatField(required=False)
    nms_radius = serializers.IntegerField(min_value=1, required=False)
    max_keypoints = serializers.IntegerField(min_value=1, required=False)
    descriptor_half = serializers.IntegerField(min_value=1, required=False)
    min_score = serializers.FloatField(required=False)

    PARAMETERS = {
        BackendName.ORACLE: ('noise_px', 'seed', 'max_flow_px', 'breakdown_fraction'),
        BackendName.PATCH_MATCH: ('patch', 'search', 'ssd_ceiling'),
        BackendName.KEYPOINTS: ('nms_radius', 'max_keypoints', 'descriptor_half', 'min_score'),
    }

    def validate(self, attrs):
        allowed = self.PARAMETERS[BackendName(attrs['name'])]
        foreign = sorted(name for name in attrs if name != 'name' and name not in allowed)
        if foreign:
            raise serializers.ValidationError(f'{attrs["name"]} backend does not take {", ".join(foreign)}.')
        if attrs.get('max_flow_px') is not None and attrs['max_flow_px'] <= 0:
            raise serializers.ValidationError('max_flow_px must be positive.')
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Experiment config file. Only ``suite`` is required; everything else falls back to the suite's
    defaults and then to the settings.
    """
    suite = serializers.ChoiceField(choices=Suite.choices)
    task_kind = serializers.ChoiceField(choices=TaskKind.choices, required=False)
    target_shapes = serializers.ListField(child=serializers.ChoiceField(choices=GRASPABLE_CHOICES),
                                          allow_empty=False, required=False)
    demo_counts = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False,
                                        required=False)
    schemes = serializers.ListField(child=serializers.ChoiceField(choices=Scheme.choices), allow_empty=False,
                                    required=False)
    score_kind = serializers.ChoiceField(choices=ScoreKind.choices, required=False)
    score_kinds = serializers.ListField(child=serializers.ChoiceField(choices=ScoreKind.choices), allow_empty=False,
                                        required=False)
    combination_mode = serializers.ChoiceField(choices=CombinationMode.choices, required=False)
    goal_conditioning = serializers.BooleanField(required=False)
    episodes = serializers.IntegerField(min_value=1, required=False)
    base_seed = serializers.IntegerField(min_value=0, required=False)
    demo_seed_offset = serializers.IntegerField(min_value=1, required=False)
    workers = serializers.IntegerField(min_value=1, required=False)
    backend = BackendSerializer(required=False)
    servo = ServoConfigSerializer(required=False)
    scene = SceneConfigSerializer(required=False)
    output_dir = serializers.CharField(required=False)

    def validate(self, attrs):
        counts = attrs.get('demo_counts', [])
        if attrs['suite'] != Suite.CROSSTASK and any(count < 1 for count in counts):
            raise serializers.ValidationError('demo_counts must be at least 1.')
        if len(set(counts)) != len(counts):
            raise serializers.ValidationError('demo_counts must be distinct.')
        if len(set(attrs.get('target_shapes', []))) != len(attrs.get('target_shapes', [])):
            raise serializers.ValidationError('target_shapes must be distinct.')
        return attrs

    def to_representation(self, instance):
        return {
            'suite': instance.suite.value,
            'task_kind': instance.task_kind.value,
            'target_shapes': [shape.value for shape in instance.target_shapes],
            'demo_counts': list(instance.demo_counts),
            'schemes': [scheme.value for scheme in instance.schemes],
            'score_kind': instance.score_kind.value,
            'score_kinds': [kind.value for kind in instance.score_kinds],
            'combination_mode': instance.combination_mode.value,
            'goal_conditioning': instance.goal_conditioning,
            'episodes': instance.episodes,
            'base_seed': instance.base_seed,
            'demo_seed_offset': instance.demo_seed_offset,
            'workers': instance.workers,
            'backend': {
                'name': instance.backend.value,
                **{name: finite_or_none(value) if isinstance(value, float) else value
                   for name, value in sorted(instance.backend_params.items())},
            },
            'servo': ServoConfigSerializer(instance.servo).data,
            'scene': SceneConfigSerializer(instance.scene_config).data,
            'output_dir': str(instance.output_dir),
        }

    def create(self, validated_data):
        values = dict(validated_data)
        suite = values.pop('suite')
        if 'backend' in values:
            params = dict(values.pop('backend'))
            values['backend'] = params.pop('name')
            values['backend_params'] = params
        if 'servo' in values:
            values['servo'] = ServoConfigSerializer().create(values['servo'])
        if 'scene' in values:
            values['scene'] = SceneConfigSerializer().create(values['scene'])
        for name in ('target_shapes', 'demo_counts', 'schemes', 'score_kinds'):
            if name in values:
                values[name] = tuple(values[name])
        try:
            return ExperimentConfig.from_settings(suite, **values)
        except ValueError as exc:
            raise serializers.ValidationError(str(exc)) from exc
