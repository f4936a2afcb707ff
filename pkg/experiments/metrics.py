"""
Per-cell aggregation of episode traces and the files experiment commands write.

Rows are written as a CSV table with fixed float formatting plus a JSON summary, so reruns with the
same config produce byte-identical files.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from core.serializers import render_json

logger = logging.getLogger(__name__)

STAGE_COLUMNS = ('position', 'grasp', 'orientation', 'success')


def _format(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f'{value:.6f}' if math.isfinite(value) else ''
    return str(value)


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    # ordered (name, value) pairs identifying the cell
    cell: tuple
    episodes: int
    position: int = 0
    grasp: int = 0
    orientation: int = 0
    success: int = 0
    mean_plan_score: float = None
    mean_steps: float = 0.0
    # episodes whose executed parts all came from demonstrations of the commanded target
    selected: int = None

    def __post_init__(self):
        object.__setattr__(self, 'cell', tuple((str(k), v) for k, v in self.cell))
        if self.episodes < 1:
            raise ValueError('a metrics row needs at least one episode')
        counts = (self.position, self.grasp, self.orientation, self.success)
        if not all(0 <= count <= self.episodes for count in counts):
            raise ValueError('stage counts must lie within the episode count')

    def rate(self, stage='success'):
        return getattr(self, stage) / self.episodes

    @property
    def success_rate(self):
        return self.rate('success')

    @property
    def selection_rate(self):
        return None if self.selected is None else self.selected / self.episodes

    def parameter(self, name, default=None):
        return dict(self.cell).get(name, default)

    def as_dict(self):
        data = {'experiment': self.experiment, **dict(self.cell), 'episodes': self.episodes}
        for stage in STAGE_COLUMNS:
            data[f'{stage}_count'] = getattr(self, stage)
        for stage in STAGE_COLUMNS:
            data[f'{stage}_rate'] = self.rate(stage)
        data['mean_plan_score'] = self.mean_plan_score
        data['mean_steps'] = self.mean_steps
        data['selection_rate'] = self.selection_rate
        return data


def aggregate(experiment, cell, traces, selected=None):
    """
    Count stage outcomes over ``traces``. Mean plan score covers the episodes that found a plan.
    """
    traces = list(traces)
    scores = [trace.plan_score for trace in traces if trace.plan_score is not None]
    return MetricsRow(
        experiment=experiment,
        cell=tuple(cell.items()) if isinstance(cell, dict) else cell,
        episodes=len(traces),
        position=sum(trace.outcome.correct_position for trace in traces),
        grasp=sum(trace.outcome.correct_grasp for trace in traces),
        orientation=sum(trace.outcome.correct_orientation for trace in traces),
        success=sum(trace.outcome.success for trace in traces),
        mean_plan_score=math.fsum(scores) / len(scores) if scores else None,
        mean_steps=math.fsum(trace.step_count for trace in traces) / len(traces),
        selected=selected,
    )


@dataclass
class ErrorTable:
    """Top-1 retrieval errors of one ranking method, bucketed by the best achievable displacement."""
    method: str
    edges: tuple
    rows: list = field(default_factory=list)

    def add(self, displacement, position_error, orientation_error, rank_of_self=None):
        self.rows.append((displacement, position_error, orientation_error, rank_of_self))

    def bucket_of(self, displacement):
        for low, high in zip(self.edges, self.edges[1:]):
            if low <= displacement < high:
                return f'{low:.3f}-{high:.3f}'
        return f'{self.edges[-1]:.3f}+'

    def buckets(self):
        grouped = {}
        for displacement, position_error, orientation_error, _ in self.rows:
            grouped.setdefault(self.bucket_of(displacement), []).append((position_error, orientation_error))
        grouped['all'] = [(row[1], row[2]) for row in self.rows]
        return grouped

    def summary(self):
        result = []
        for bucket, errors in self.buckets().items():
            if not errors:
                continue
            result.append({
                'method': self.method,
                'bucket': bucket,
                'queries': len(errors),
                'mean_position_error': math.fsum(e[0] for e in errors) / len(errors),
                'mean_orientation_error': math.fsum(e[1] for e in errors) / len(errors),
            })
        return result

    @property
    def mean_position_error(self):
        return math.fsum(row[1] for row in self.rows) / len(self.rows) if self.rows else float('nan')


def write_csv(path, records):
    """Write dictionaries sharing one key order as a CSV table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = list(records)
    headers = list(records[0]) if records else []
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(headers)
        for record in records:
            writer.writerow([_format(record.get(name)) for name in headers])
    logger.info('wrote %d rows to %s', len(records), path)
    return path


def _summary_value(value):
    if isinstance(value, float):
        return round(value, 6) if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: _summary_value(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_summary_value(item) for item in value]
    return value


def write_summary(path, summary):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_json(_summary_value(summary)))
    logger.info('wrote summary to %s', path)
    return path
