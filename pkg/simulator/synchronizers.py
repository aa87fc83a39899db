"""
Simulator app synchronizers

Baselines the FastSync protocol is compared against. BSP waits at a
barrier for every worker. SSP lets the fastest worker lead the slowest by
at most ``s`` iterations, DSSP picks that bound per request from
``[s, r_max]`` using the controller's view of worker speeds, and ASP
never blocks. All of them report to the controller and wait for its
reply after each iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from simulator.config import ConfigError, SimulationConfig, SyncKind, SynchronizerSpec
from simulator.engine import Edge, EndOfSimulation, Engine, Network, SimulationError
from simulator.metrics import IterationMetrics
from simulator.traces import TraceSet

logger = logging.getLogger(__name__)


class GateDecision(str, Enum):
    PROCEED = 'proceed'
    BLOCK = 'block'


# --------------------------------------------------------------------------- #
# Gates                                                                       #
# --------------------------------------------------------------------------- #


def ssp_gate(worker_clock: int, min_clock: int, s: int) -> GateDecision:
    if worker_clock < 0 or min_clock < 0:
        raise SimulationError(f"Clocks must be >= 0, got {worker_clock}, {min_clock}")
    return GateDecision.PROCEED if worker_clock - min_clock <= s else GateDecision.BLOCK


def dssp_gate(worker_clock: int, min_clock: int, s: int, r_max: int, controller_estimate: int) -> GateDecision:
    if s > r_max:
        raise ConfigError([f"dssp staleness {s} exceeds r_max {r_max}"])
    threshold = min(r_max, s + max(0, int(controller_estimate)))
    return ssp_gate(worker_clock, min_clock, threshold)


def dssp_controller_estimate(fast_horizon: float, elapsed: float, slowest_mean: float) -> int:
    """Iterations the slowest worker should finish before the fast one checks in again."""
    if slowest_mean <= 0 or fast_horizon < 0:
        return 0
    return int(math.floor((fast_horizon + max(0.0, elapsed)) / slowest_mean))


def bsp_barrier(finish_times: Sequence[float]) -> float:
    if len(finish_times) == 0:
        raise SimulationError("A barrier needs at least one worker")
    return float(np.max(finish_times))


# --------------------------------------------------------------------------- #
# Run context                                                                 #
# --------------------------------------------------------------------------- #


@dataclass
class RunContext:
    """
    Everything one seeded run shares across its iterations. The trace set
    starts with ``clustering_window`` warmup iterations; iteration ``k`` of
    the run reads column ``warmup + k``. ``local_draws`` holds the graph's
    local task durations per worker and iteration plus one spare duration
    used when the protocol fills a skipped option.
    """

    config: SimulationConfig
    traces: TraceSet
    local_draws: np.ndarray
    network: Network
    rng: np.random.Generator
    run_index: int = 0

    @property
    def worker_ids(self) -> Tuple[str, ...]:
        return self.traces.worker_ids

    @property
    def n_workers(self) -> int:
        return self.traces.n_workers

    @property
    def warmup(self) -> int:
        return self.config.clustering_window

    def _column(self, iteration: int) -> int:
        column = self.warmup + iteration
        if not 0 <= column < self.traces.n_iterations:
            raise SimulationError(f"Iteration {iteration} is outside the trace set")
        return column

    def graph_locals(self, worker: int, iteration: int) -> np.ndarray:
        return self.local_draws[worker, self._column(iteration), : self.config.graph.local_count]

    def spare_local(self, worker: int, iteration: int) -> float:
        return float(self.local_draws[worker, self._column(iteration), -1])

    def pre_sync(self, worker: int, iteration: int) -> float:
        runtime = float(self.traces.runtimes[worker, self._column(iteration)])
        return self.config.graph.pre_sync_duration(runtime, self.graph_locals(worker, iteration))

    def pre_sync_vector(self, iteration: int) -> np.ndarray:
        return np.array([self.pre_sync(worker, iteration) for worker in range(self.n_workers)])


class Synchronizer:
    kind: SyncKind

    def __init__(self, context: RunContext, spec: SynchronizerSpec) -> None:
        self.context = context
        self.spec = spec

    def run_iteration(self, iteration: int) -> IterationMetrics:
        raise NotImplementedError

    def run(self) -> List[IterationMetrics]:
        return [self.run_iteration(k) for k in range(self.context.config.rounds)]


# --------------------------------------------------------------------------- #
# BSP                                                                         #
# --------------------------------------------------------------------------- #


class BSPSynchronizer(Synchronizer):
    """Every worker reports; the controller releases all once the last report lands."""

    kind = SyncKind.BSP

    def run_iteration(self, iteration: int) -> IterationMetrics:
        ctx = self.context
        network, rng = ctx.network, ctx.rng
        ids = ctx.worker_ids
        network.start_episodes(ids, 0.0, rng)
        compute = ctx.pre_sync_vector(iteration)
        reports = np.array(
            [network.deliver(w, None, compute[i], rng, Edge.WORKER_CONTROLLER) for i, w in enumerate(ids)]
        )
        barrier = bsp_barrier(reports)
        releases = np.array([network.deliver(None, w, barrier, rng, Edge.WORKER_CONTROLLER) for w in ids])
        end = float(releases.max())
        communication = float(np.mean(np.maximum(end - compute, 0.0)))
        return IterationMetrics(
            runtime_ms=end,
            sync_points=ctx.config.graph.sync_points,
            participation=1.0,
            outcome=1,
            synced_workers=len(ids),
            computation_ms=float(compute.mean()),
            communication_ms=communication,
            communication_with_reports_ms=communication,
            decision_messages=2 * len(ids),
            blocked_ms=float(np.mean(barrier - reports)),
        )


# --------------------------------------------------------------------------- #
# ASP / SSP / DSSP                                                            #
# --------------------------------------------------------------------------- #


class StaleSynchronizer(Synchronizer):
    """
    Continuous-clock runner for ASP, SSP and DSSP.

    A worker reports after each iteration; the controller replies at once
    when the gate lets it start the next iteration and otherwise holds the
    reply until the slowest clock catches up. Rounds are reconstructed
    afterwards: round ``k`` ends when the last worker has its reply for
    iteration ``k``.
    """

    def __init__(self, context: RunContext, spec: SynchronizerSpec) -> None:
        super().__init__(context, spec)
        self.kind = spec.kind
        self._rounds: Optional[List[IterationMetrics]] = None
        self.max_gap_at_proceed = 0

    def run_iteration(self, iteration: int) -> IterationMetrics:
        if self._rounds is None:
            self._rounds = self._simulate()
        return self._rounds[iteration]

    def _threshold(
        self,
        worker: int,
        now: float,
        clock: np.ndarray,
        last_report: np.ndarray,
        intervals: List[List[float]],
    ) -> Optional[int]:
        if self.kind is SyncKind.ASP:
            return None
        if self.kind is SyncKind.SSP:
            return self.spec.staleness
        slowest = int(np.argmin(clock))
        if not intervals[slowest] or not intervals[worker]:
            estimate = 0
        else:
            # the fast worker checks in again once it has run through the extension range
            extension = max(1, self.spec.r_max - self.spec.staleness)
            estimate = dssp_controller_estimate(
                extension * float(np.mean(intervals[worker])),
                now - last_report[slowest],
                float(np.mean(intervals[slowest])),
            )
        return min(self.spec.r_max, self.spec.staleness + estimate)

    def _simulate(self) -> List[IterationMetrics]:
        ctx = self.context
        network, rng = ctx.network, ctx.rng
        ids = ctx.worker_ids
        n, rounds = ctx.n_workers, ctx.config.rounds
        compute = np.array([ctx.pre_sync_vector(k) for k in range(rounds)])

        engine = Engine()
        clock = np.zeros(n, dtype=int)
        last_report = np.zeros(n)
        intervals: List[List[float]] = [[] for _ in range(n)]
        started = np.full((rounds, n), np.nan)
        finished = np.full((rounds, n), np.nan)
        reported = np.full((rounds, n), np.nan)
        ready = np.full((rounds, n), np.nan)
        blocked_time = np.zeros((rounds, n))
        messages = np.zeros(rounds, dtype=int)
        held: Dict[int, Tuple[int, float]] = {}

        def reply(worker: int, k: int, now: float) -> None:
            messages[k] += 1
            engine.schedule(network.deliver(None, ids[worker], now, rng, Edge.WORKER_CONTROLLER), ('reply', worker, k))

        def passes(worker: int, now: float) -> bool:
            threshold = self._threshold(worker, now, clock, last_report, intervals)
            if threshold is None:
                return True
            if ssp_gate(int(clock[worker]), int(clock.min()), threshold) is GateDecision.BLOCK:
                return False
            self.max_gap_at_proceed = max(self.max_gap_at_proceed, int(clock[worker] - clock.min()))
            return True

        for worker in range(n):
            started[0, worker] = 0.0
            engine.schedule(compute[0, worker], ('finish', worker, 0))

        while True:
            try:
                now, (kind, worker, k) = engine.advance()
            except EndOfSimulation:
                break
            if kind == 'finish':
                finished[k, worker] = now
                messages[k] += 1
                engine.schedule(
                    network.deliver(ids[worker], None, now, rng, Edge.WORKER_CONTROLLER), ('report', worker, k)
                )
            elif kind == 'report':
                reported[k, worker] = now
                clock[worker] = k + 1
                intervals[worker].append(now - last_report[worker])
                last_report[worker] = now
                if k + 1 == rounds or passes(worker, now):
                    reply(worker, k, now)
                else:
                    held[worker] = (k, now)
                for other in sorted(held):
                    other_k, since = held[other]
                    if other != worker and passes(other, now):
                        del held[other]
                        blocked_time[other_k, other] = now - since
                        reply(other, other_k, now)
            elif kind == 'reply':
                ready[k, worker] = now
                if k + 1 < rounds:
                    started[k + 1, worker] = now
                    engine.schedule(now + compute[k + 1, worker], ('finish', worker, k + 1))

        if held or np.isnan(ready).any():
            raise SimulationError(f"{self.spec.label} run ended with workers still blocked")
        return self._rounds_from(compute, started, finished, reported, ready, blocked_time, messages)

    def _rounds_from(
        self, compute, started, finished, reported, ready, blocked_time, messages
    ) -> List[IterationMetrics]:
        """
        Round ``k`` of the wall clock ends when the last reply for iteration
        ``k`` lands. Communication is charged per worker over its own
        iteration: report, any hold at the gate, and the reply.
        """
        rounds = compute.shape[0]
        ends = ready.max(axis=1)
        waits = ready - finished
        applicable = self.kind is not SyncKind.ASP
        metrics = []
        previous = 0.0
        for k in range(rounds):
            runtime = float(ends[k] - previous)
            previous = float(ends[k])
            first_restart = float(np.min(started[k + 1])) if k + 1 < rounds else float(ends[k])
            participation = float(np.mean(reported[k] <= first_restart)) if applicable else 1.0
            computation = float(compute[k].mean())
            communication = float(waits[k].mean())
            metrics.append(
                IterationMetrics(
                    runtime_ms=runtime,
                    sync_points=self.context.config.graph.sync_points,
                    participation=participation,
                    participation_applicable=applicable,
                    computation_ms=computation,
                    communication_ms=communication,
                    communication_with_reports_ms=communication,
                    decision_messages=int(messages[k]),
                    blocked_ms=float(blocked_time[k].mean()),
                )
            )
        logger.debug(
            "%s run %d: %d rounds, max gap at proceed %d",
            self.spec.label,
            self.context.run_index,
            rounds,
            self.max_gap_at_proceed,
        )
        return metrics
