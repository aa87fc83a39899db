"""
Simulator app configuration types
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from game.services import PayoffParameters
from scheduler.services import CompositionMode
from simulator.engine import PartitionModel, SimulationError
from stats.services import Gaussian


class ConfigError(SimulationError):
    """Raised when a simulation config or task graph is invalid."""

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class TaskProfile(str, Enum):
    SHORT = 'short'
    LONG = 'long'

    @property
    def mean(self) -> float:
        return 25.0 if self is TaskProfile.SHORT else 80.0


# --------------------------------------------------------------------------- #
# Task graph                                                                  #
# --------------------------------------------------------------------------- #


class TaskKind(str, Enum):
    SYNC = 'sync'
    ASYNC = 'async'
    LOCAL = 'local'
    PROGRESS_REPORT = 'progress_report'


@dataclass(frozen=True)
class TaskNode:
    """
    One node of the per-iteration graph. Async nodes take ``share`` of the
    worker's traced runtime, local nodes draw from the local task range,
    progress reports and the sync node are charged at the controller cost.
    """

    kind: TaskKind
    share: float = 0.0


@dataclass(frozen=True)
class TaskGraph:
    nodes: Tuple[TaskNode, ...]

    def __post_init__(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise ConfigError(errors)

    @classmethod
    def default(cls) -> 'TaskGraph':
        """Two async tasks, two local tasks and one sync task, reporting after each."""
        report = TaskNode(TaskKind.PROGRESS_REPORT)
        return cls(
            nodes=(
                TaskNode(TaskKind.ASYNC, 0.5),
                report,
                TaskNode(TaskKind.LOCAL),
                report,
                TaskNode(TaskKind.ASYNC, 0.5),
                report,
                TaskNode(TaskKind.LOCAL),
                report,
                TaskNode(TaskKind.SYNC),
            )
        )

    def validation_errors(self) -> List[str]:
        errors = []
        kinds = [node.kind for node in self.nodes]
        if kinds.count(TaskKind.SYNC) != 1 or not kinds or kinds[-1] is not TaskKind.SYNC:
            errors.append("task graph must end in its only sync node")
        shares = [node.share for node in self.nodes if node.kind is TaskKind.ASYNC]
        if not shares:
            errors.append("task graph needs at least one async node")
        elif any(share < 0 for share in shares) or not math.isclose(sum(shares), 1.0, abs_tol=1e-9):
            errors.append(f"async shares must be non-negative and sum to 1, got {shares}")
        return errors

    @property
    def sync_points(self) -> int:
        return sum(1 for node in self.nodes if node.kind is TaskKind.SYNC)

    @property
    def local_count(self) -> int:
        return sum(1 for node in self.nodes if node.kind is TaskKind.LOCAL)

    @property
    def report_count(self) -> int:
        return sum(1 for node in self.nodes if node.kind is TaskKind.PROGRESS_REPORT)

    def pre_sync_segments(self, runtime: float, local_durations: Sequence[float]) -> List[float]:
        """Compute durations of the nodes before the sync node, in order."""
        if len(local_durations) < self.local_count:
            raise ConfigError([f"need {self.local_count} local durations, got {len(local_durations)}"])
        segments = []
        locals_iter = iter(local_durations)
        for node in self.nodes:
            if node.kind is TaskKind.ASYNC:
                segments.append(node.share * runtime)
            elif node.kind is TaskKind.LOCAL:
                segments.append(float(next(locals_iter)))
        return segments

    def pre_sync_duration(self, runtime: float, local_durations: Sequence[float]) -> float:
        total = 0.0
        for segment in self.pre_sync_segments(runtime, local_durations):
            total += segment
        return total


# --------------------------------------------------------------------------- #
# Synchronizers                                                               #
# --------------------------------------------------------------------------- #


class SyncKind(str, Enum):
    FASTSYNC = 'fastsync'
    ASP = 'asp'
    BSP = 'bsp'
    SSP = 'ssp'
    DSSP = 'dssp'


@dataclass(frozen=True)
class SynchronizerSpec:
    kind: SyncKind
    staleness: int = 0
    r_max: int = 0

    @classmethod
    def parse(cls, text: str) -> 'SynchronizerSpec':
        """Parse ``fastsync``, ``asp``, ``bsp``, ``ssp:S`` or ``dssp:S:RMAX``."""
        parts = [part.strip() for part in str(text).strip().lower().split(':')]
        try:
            kind = SyncKind(parts[0])
        except ValueError:
            raise ConfigError([f"unknown synchronizer '{text}'"]) from None
        expected = {SyncKind.SSP: 2, SyncKind.DSSP: 3}.get(kind, 1)
        if len(parts) != expected:
            raise ConfigError([f"synchronizer '{text}' needs {expected - 1} parameter(s)"])
        try:
            numbers = [int(part) for part in parts[1:]]
        except ValueError:
            raise ConfigError([f"synchronizer '{text}' parameters must be integers"]) from None
        spec = cls(kind, *numbers)
        errors = spec.validation_errors()
        if errors:
            raise ConfigError(errors)
        return spec

    def validation_errors(self) -> List[str]:
        errors = []
        if self.staleness < 0:
            errors.append(f"staleness must be >= 0, got {self.staleness}")
        if self.kind is SyncKind.DSSP and self.staleness > self.r_max:
            errors.append(f"dssp staleness {self.staleness} exceeds r_max {self.r_max}")
        return errors

    @property
    def label(self) -> str:
        if self.kind is SyncKind.SSP:
            return f"ssp:{self.staleness}"
        if self.kind is SyncKind.DSSP:
            return f"dssp:{self.staleness}:{self.r_max}"
        return self.kind.value

    def __str__(self) -> str:
        return self.label


DEFAULT_SYNCHRONIZERS = tuple(
    SynchronizerSpec.parse(text) for text in ('fastsync', 'bsp', 'ssp:3', 'ssp:5', 'dssp:3:7')
)


# --------------------------------------------------------------------------- #
# Simulation config                                                           #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SimulationConfig:
    n_workers: int = 20
    alpha: float = 0.7
    rounds: int = 200
    runs: int = 100
    seed: int = 0
    task_profile: TaskProfile = TaskProfile.SHORT
    heterogeneity_spread: float = 1.0
    slow_fraction: float = 0.5
    slow_factor: float = 1.6
    worker_exec_stddev: float = 1.5
    straggler_probability: float = 0.1
    straggler_slowdown: float = 1.5
    drift_rate: float = 0.0
    ww_msg: Gaussian = Gaussian(2.0, 0.3 ** 2)
    wc_msg: Gaussian = Gaussian(25.0, 2.0 ** 2)
    local_task_range: Tuple[float, float] = (5.0, 10.0)
    clustering_cost: float = 20.0
    clustering_frequency: Optional[int] = 5
    clustering_window: int = 10
    dbscan_eps: Optional[float] = None
    dbscan_min_pts: Optional[int] = None
    partition: PartitionModel = PartitionModel()
    late_threshold: int = 1
    mode: CompositionMode = CompositionMode.LITERAL
    payoff: PayoffParameters = PayoffParameters()
    graph: TaskGraph = field(default_factory=TaskGraph.default)

    @classmethod
    def heterogeneity_study(cls, worker_exec_stddev: float, **overrides) -> 'SimulationConfig':
        """
        Large cluster with a slow-dominated split. Three quarters of the
        workers sit in the slow group, so a first-option sync keeps the
        fast quarter plus ``alpha`` of the rest.
        """
        values = dict(n_workers=100, slow_fraction=0.75, worker_exec_stddev=worker_exec_stddev)
        values.update(overrides)
        return cls(**values)

    @property
    def fixed_clustering(self) -> bool:
        return self.clustering_frequency is None

    @property
    def quorum_size(self) -> int:
        return max(1, math.ceil(self.alpha * self.n_workers - 1e-9))

    def reclusters_at(self, iteration: int) -> bool:
        if self.fixed_clustering:
            return iteration == 0
        return iteration % self.clustering_frequency == 0

    def validation_errors(self) -> List[str]:
        errors = []
        if self.n_workers < 2:
            errors.append(f"n_workers must be >= 2, got {self.n_workers}")
        if not 0.0 <= self.alpha <= 1.0:
            errors.append(f"alpha must be in [0, 1], got {self.alpha}")
        for name in ('rounds', 'runs', 'clustering_window', 'late_threshold'):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ('heterogeneity_spread', 'worker_exec_stddev', 'clustering_cost'):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.slow_fraction < 1.0:
            errors.append(f"slow_fraction must be in (0, 1), got {self.slow_fraction}")
        for name in ('slow_factor', 'straggler_slowdown'):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.straggler_probability <= 1.0:
            errors.append(f"straggler_probability must be in [0, 1], got {self.straggler_probability}")
        low, high = self.local_task_range
        if low < 0 or high < low:
            errors.append(f"local_task_range must satisfy 0 <= min <= max, got {self.local_task_range}")
        if self.clustering_frequency is not None and self.clustering_frequency < 1:
            errors.append(f"clustering_frequency must be >= 1 or fixed, got {self.clustering_frequency}")
        if self.dbscan_eps is not None and self.dbscan_eps <= 0:
            errors.append(f"dbscan.eps must be > 0, got {self.dbscan_eps}")
        if self.dbscan_min_pts is not None and self.dbscan_min_pts < 1:
            errors.append(f"dbscan.min_pts must be >= 1, got {self.dbscan_min_pts}")
        errors.extend(self.partition.validation_errors())
        errors.extend(f"payoff: {error}" for error in self.payoff.validation_errors(2, high))
        return errors

    def validate(self) -> 'SimulationConfig':
        errors = self.validation_errors()
        if errors:
            raise ConfigError(errors)
        return self

    def with_values(self, **changes) -> 'SimulationConfig':
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, object]:
        return {
            'n_workers': self.n_workers,
            'alpha': self.alpha,
            'rounds': self.rounds,
            'runs': self.runs,
            'seed': self.seed,
            'task_profile': self.task_profile.value,
            'worker_exec_stddev': self.worker_exec_stddev,
            'ww_msg': self.ww_msg.to_dict(),
            'wc_msg': self.wc_msg.to_dict(),
            'local_task_range': list(self.local_task_range),
            'clustering_cost': self.clustering_cost,
            'clustering_frequency': self.clustering_frequency or 'fixed',
            'mode': self.mode.value,
        }
