"""
Simulator app metrics

Iterations roll up into per-run means; runs roll up into the reported
mean and sample standard deviation. Runs are keyed by their index and
reduced in index order, so merging partial accumulators in any order
gives the same report.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from simulator.engine import SimulationError

BLOCKED_UNIT_MS = 5.0

METRICS = (
    'runtime_per_sync_point_ms',
    'participation',
    'success_option_1',
    'success_option_2',
    'success_option_3',
    'failures',
    'computation_ms',
    'communication_ms',
    'communication_with_reports_ms',
    'clustering_ms',
    'decision_messages',
    'progress_messages',
    'notifications',
    'blocked_ms',
    'blocked_units',
    'schedule_failures',
)


@dataclass(frozen=True)
class IterationMetrics:
    """
    One iteration of the task graph across all workers. ``outcome`` is the
    option a FastSync iteration synced at (BSP records 1), ``failed`` marks
    an iteration that aborted at every option. The stale-synchronous
    family records neither.
    """

    runtime_ms: float
    sync_points: int = 1
    participation: float = 1.0
    participation_applicable: bool = True
    outcome: Optional[int] = None
    failed: bool = False
    synced_workers: int = 0
    computation_ms: float = 0.0
    communication_ms: float = 0.0
    communication_with_reports_ms: float = 0.0
    clustering_ms: float = 0.0
    decision_messages: int = 0
    progress_messages: int = 0
    notifications: int = 0
    blocked_ms: float = 0.0
    schedule_failure: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.participation <= 1.0 + 1e-12:
            raise SimulationError(f"Participation must be in [0, 1], got {self.participation}")
        if self.sync_points < 1:
            raise SimulationError(f"An iteration needs at least one sync point, got {self.sync_points}")

    @property
    def runtime_per_sync_point(self) -> float:
        return self.runtime_ms / self.sync_points

    def values(self) -> Dict[str, float]:
        return {
            'runtime_per_sync_point_ms': self.runtime_per_sync_point,
            'participation': self.participation,
            'success_option_1': float(self.outcome == 1),
            'success_option_2': float(self.outcome == 2),
            'success_option_3': float(self.outcome == 3),
            'failures': float(self.failed),
            'computation_ms': self.computation_ms,
            'communication_ms': self.communication_ms,
            'communication_with_reports_ms': self.communication_with_reports_ms,
            'clustering_ms': self.clustering_ms,
            'decision_messages': float(self.decision_messages),
            'progress_messages': float(self.progress_messages),
            'notifications': float(self.notifications),
            'blocked_ms': self.blocked_ms,
            'blocked_units': self.blocked_ms / BLOCKED_UNIT_MS,
            'schedule_failures': float(self.schedule_failure),
        }


def run_means(iterations: Sequence[IterationMetrics]) -> Dict[str, float]:
    if not iterations:
        raise SimulationError("A run needs at least one iteration")
    table = np.array([[item.values()[name] for name in METRICS] for item in iterations], dtype=float)
    return dict(zip(METRICS, (float(value) for value in table.mean(axis=0))))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    stddev: float
    n: int


@dataclass(frozen=True)
class MetricsReport:
    synchronizer: str
    summaries: Dict[str, MetricSummary]
    status: str = 'ok'
    participation_applicable: bool = True

    def mean(self, metric: str) -> float:
        return self.summaries[metric].mean

    def to_rows(self, cell: str) -> List[Dict[str, object]]:
        return [
            {
                'cell': cell,
                'synchronizer': self.synchronizer,
                'metric': metric,
                'mean': summary.mean,
                'stddev': summary.stddev,
                'n': summary.n,
                'status': self.status,
            }
            for metric, summary in self.summaries.items()
        ]


@dataclass
class MetricsAccumulator:
    runs: Dict[int, Dict[str, float]] = field(default_factory=dict)
    participation_applicable: bool = True
    schedule_failures: int = 0

    def add_run(self, run_index: int, iterations: Iterable[IterationMetrics]) -> 'MetricsAccumulator':
        iterations = list(iterations)
        if run_index in self.runs:
            raise SimulationError(f"Run {run_index} was already recorded")
        self.runs[run_index] = run_means(iterations)
        self.participation_applicable = self.participation_applicable and all(
            item.participation_applicable for item in iterations
        )
        self.schedule_failures += sum(1 for item in iterations if item.schedule_failure)
        return self

    def merge(self, other: 'MetricsAccumulator') -> 'MetricsAccumulator':
        overlap = set(self.runs) & set(other.runs)
        if overlap:
            raise SimulationError(f"Runs recorded twice: {sorted(overlap)}")
        merged = MetricsAccumulator(
            runs={**self.runs, **other.runs},
            participation_applicable=self.participation_applicable and other.participation_applicable,
            schedule_failures=self.schedule_failures + other.schedule_failures,
        )
        return merged

    def report(self, synchronizer: str) -> MetricsReport:
        if not self.runs:
            raise SimulationError("No runs to report")
        ordered = [self.runs[index] for index in sorted(self.runs)]
        summaries = {}
        for metric in METRICS:
            values = np.array([run[metric] for run in ordered], dtype=float)
            stddev = float(values.std(ddof=1)) if values.size > 1 else 0.0
            summaries[metric] = MetricSummary(float(values.mean()), stddev, int(values.size))
        status = 'ok' if self.schedule_failures == 0 else 'schedule_failures'
        return MetricsReport(
            synchronizer=synchronizer,
            summaries=summaries,
            status=status,
            participation_applicable=self.participation_applicable,
        )
