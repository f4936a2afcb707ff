from dataclasses import replace

from rest_framework import serializers

from core.serializers import finite_or_none, load_instance, parse_json, render_json
from planner.graph import GOAL, LIVE, CombinationMode, DemoGraph, PartNode
from similarity.scores import Orientation, ScoreKind, SimilarityResult, orientation


class PartNodeSerializer(serializers.Serializer):
    part_id = serializers.CharField()
    stage_index = serializers.IntegerField(min_value=0)
    stage_count = serializers.IntegerField(min_value=1)

    def validate(self, attrs):
        if attrs['stage_index'] >= attrs['stage_count']:
            raise serializers.ValidationError('stage_index must be below stage_count.')
        if attrs['part_id'] in (LIVE, GOAL):
            raise serializers.ValidationError(f'{attrs["part_id"]} is reserved.')
        return attrs


class EdgeSerializer(serializers.Serializer):
    source = serializers.CharField()
    target = serializers.CharField()
    # null stands for an infinite flow distance
    raw = serializers.FloatField(allow_null=True)
    normalized = serializers.FloatField(min_value=0, max_value=1)
    valid_pixel_fraction = serializers.FloatField(min_value=0, max_value=1)

    def validate_normalized(self, value):
        if value <= 0:
            raise serializers.ValidationError('Edge weights must be positive.')
        return value


class DemoGraphSerializer(serializers.Serializer):
    """Adjacency dump of a graph: nodes, raw and normalized edge weights, mode and temperature."""
    score_kind = serializers.ChoiceField(choices=ScoreKind.choices)
    mode = serializers.ChoiceField(choices=CombinationMode.choices)
    temperature = serializers.FloatField(min_value=0)
    stage_filter = serializers.BooleanField()
    cost_cap = serializers.FloatField(min_value=0)
    entry_stage = serializers.IntegerField(min_value=0)
    nodes = PartNodeSerializer(many=True)
    edges = EdgeSerializer(many=True)

    def to_representation(self, instance):
        kinds = {result.kind for result in instance.edges.values()}
        kind = kinds.pop() if len(kinds) == 1 else getattr(instance.scorer, 'kind', ScoreKind.FS)
        return {
            'score_kind': str(ScoreKind(kind).value),
            'mode': instance.mode.value,
            'temperature': instance.temperature,
            'stage_filter': instance.stage_filter,
            'cost_cap': instance.cost_cap,
            'entry_stage': instance.entry_stage,
            'nodes': PartNodeSerializer(instance.nodes, many=True).data,
            'edges': [
                {
                    'source': source,
                    'target': target,
                    'raw': finite_or_none(result.raw),
                    'normalized': result.normalized,
                    'valid_pixel_fraction': result.valid_pixel_fraction,
                }
                for (source, target), result in sorted(instance.edges.items())
            ],
        }

    def validate(self, attrs):
        if attrs['temperature'] <= 0:
            raise serializers.ValidationError('temperature must be positive.')
        ids = [node['part_id'] for node in attrs['nodes']]
        if len(ids) != len(set(ids)):
            raise serializers.ValidationError('Part ids must be unique.')
        known = set(ids)
        pairs = [(edge['source'], edge['target']) for edge in attrs['edges']]
        if len(pairs) != len(set(pairs)):
            raise serializers.ValidationError('Edges must be unique.')
        for source, target in pairs:
            if source not in known | {LIVE} or target not in known | {GOAL}:
                raise serializers.ValidationError(f'Edge {source}->{target} names an unknown node.')
        return attrs

    def create(self, validated_data):
        kind = ScoreKind(validated_data['score_kind'])
        missing = float('inf') if orientation(kind) == Orientation.DISTANCE_LIKE else 0.0
        edges = {
            (edge['source'], edge['target']): SimilarityResult(
                missing if edge['raw'] is None else edge['raw'],
                edge['normalized'], kind, edge['valid_pixel_fraction'],
            )
            for edge in validated_data['edges']
        }
        return DemoGraph(
            nodes=tuple(PartNode(**node) for node in validated_data['nodes']),
            edges=edges,
            mode=validated_data['mode'],
            temperature=validated_data['temperature'],
            stage_filter=validated_data['stage_filter'],
            cost_cap=validated_data['cost_cap'],
            entry_stage=validated_data['entry_stage'],
        )


class PlanSerializer(serializers.Serializer):
    path = serializers.ListField(child=serializers.CharField(), allow_empty=False)
    combined_score = serializers.FloatField()
    per_edge_scores = serializers.ListField(child=serializers.FloatField())
    mode = serializers.ChoiceField(choices=CombinationMode.choices)
    cost = serializers.FloatField()

    def to_representation(self, instance):
        return {
            'path': list(instance.path),
            'combined_score': instance.combined_score,
            'per_edge_scores': list(instance.per_edge_scores),
            'mode': instance.mode.value,
            'cost': instance.cost,
        }


def dump_graph(graph):
    return render_json(DemoGraphSerializer(graph).data)


def load_graph(content, bank=None, scorer=None):
    """Rebuild a graph from its dump. Attaching query nodes needs the bank and scorer it was built with."""
    graph = load_instance(DemoGraphSerializer, parse_json(content))
    return replace(graph, bank=bank, scorer=scorer)
