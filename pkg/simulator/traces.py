"""
Simulator app traces

Per-worker iteration runtimes, either generated from a task profile or
ingested from a trace file, in a workers x iterations matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from simulator.config import SimulationConfig
from simulator.engine import SimulationError

logger = logging.getLogger(__name__)


class TraceError(SimulationError):
    """Raised for malformed or unusable trace sets."""


@dataclass(frozen=True)
class TraceSet:
    worker_ids: Tuple[str, ...]
    runtimes: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self) -> None:
        matrix = np.array(self.runtimes, dtype=float)
        ids = tuple(str(worker_id) for worker_id in self.worker_ids)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise TraceError(f"Expected {len(ids)} rows of runtimes, got shape {matrix.shape}")
        if matrix.shape[1] < 1:
            raise TraceError("Trace set holds no iterations")
        if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
            raise TraceError("Runtimes must be finite and non-negative")
        if len(set(ids)) != len(ids):
            raise TraceError("Worker ids must be unique")
        matrix.setflags(write=False)
        object.__setattr__(self, 'worker_ids', ids)
        object.__setattr__(self, 'runtimes', matrix)

    @property
    def n_workers(self) -> int:
        return len(self.worker_ids)

    @property
    def n_iterations(self) -> int:
        return int(self.runtimes.shape[1])

    def cycled(self, length: int) -> 'TraceSet':
        """Repeat iterations so the set covers ``length`` of them."""
        if length <= self.n_iterations:
            return TraceSet(self.worker_ids, self.runtimes[:, :length])
        logger.warning("Trace set has %d iterations, cycling to %d", self.n_iterations, length)
        index = np.arange(length) % self.n_iterations
        return TraceSet(self.worker_ids, self.runtimes[:, index])

    def restricted(self, n_workers: int) -> 'TraceSet':
        if n_workers > self.n_workers:
            raise TraceError(f"Trace set has {self.n_workers} workers, {n_workers} requested")
        return TraceSet(self.worker_ids[:n_workers], self.runtimes[:n_workers])


def worker_names(n: int) -> Tuple[str, ...]:
    width = max(3, len(str(n - 1)))
    return tuple(f"w{index:0{width}d}" for index in range(n))


def slow_group_size(config: SimulationConfig) -> int:
    n = config.n_workers
    return min(n - 1, max(1, int(round(config.slow_fraction * n))))


def generate_traces(
    config: SimulationConfig,
    rng: np.random.Generator,
    iterations: Optional[int] = None,
    worker_ids: Optional[Sequence[str]] = None,
) -> TraceSet:
    """
    Draw a synthetic trace set.

    Workers split into a fast and a slow speed group (the slow group runs
    ``slow_factor`` times the profile mean). Each worker keeps a static
    offset drawn with ``heterogeneity_spread``; each iteration every group
    independently straggles with ``straggler_probability``, stretching its
    runtimes by ``straggler_slowdown``. Per-iteration noise and a linear
    drift are added last, and the result is clamped at zero. Each worker
    drifts at its own rate, drawn uniformly from ``[0, 2 * drift_rate]``,
    so workers change speed relative to each other and can move between
    clusters over a run.
    """
    n = config.n_workers
    t = config.clustering_window + config.rounds if iterations is None else int(iterations)
    ids = worker_names(n) if worker_ids is None else tuple(worker_ids)
    groups = np.zeros(n, dtype=int)
    groups[n - slow_group_size(config):] = 1

    base = np.where(groups == 1, config.task_profile.mean * config.slow_factor, config.task_profile.mean)
    offsets = rng.normal(0.0, config.heterogeneity_spread, size=n)
    straggling = rng.random((2, t)) < config.straggler_probability
    regime = np.where(straggling, config.straggler_slowdown, 1.0)
    noise = rng.normal(0.0, config.worker_exec_stddev, size=(n, t))
    rates = config.drift_rate * rng.uniform(0.0, 2.0, size=n)
    drift = rates[:, None] * np.arange(t)[None, :]

    runtimes = (base + offsets)[:, None] * regime[groups] + noise + drift
    return TraceSet(ids, np.maximum(runtimes, 0.0))
