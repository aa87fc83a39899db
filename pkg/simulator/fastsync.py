"""
Simulator app FastSync driver

The controller keeps a sliding window of every worker's pre-sync
durations, periodically re-clusters the workers, builds the three-option
schedule and broadcasts it. Each iteration then runs the late-notification
protocol: workers extrapolate their finish at half progress, late ones
broadcast notifications, and the option deadlines settle who syncs.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Set, Tuple

import numpy as np

from clustering.services import ClusteringError, Role, TraceWindow, TwoClusterResult, form_two_clusters_widening
from protocol.services import (
    CHECKPOINT,
    NUM_OPTIONS,
    Abort,
    ExecuteLocal,
    ExecuteSync,
    LateNotification,
    LocalTaskDone,
    NotificationArrived,
    OptionDeadlinePassed,
    Phase,
    PhaseKind,
    ProtocolError,
    ReachedSyncPoint,
    WorkerState,
    detect_lateness,
    mark_sent,
    merge_notifications,
    new_worker,
    should_send_late_notification,
    worker_step,
)
from scheduler.services import SchedulerError, SyncSchedule, build_schedule
from simulator.config import SyncKind, SynchronizerSpec
from simulator.engine import Dropped, Edge, EndOfSimulation, Engine, SimulationError
from simulator.metrics import IterationMetrics
from simulator.synchronizers import RunContext, Synchronizer
from stats.services import StatsError

logger = logging.getLogger(__name__)


class ProtocolAbort(SimulationError):
    """Raised when a worker receives an event its phase cannot accept."""


class FastSyncController:
    """Progress tracker, clusterer and scheduler for one run."""

    def __init__(self, context: RunContext) -> None:
        self.context = context
        config = context.config
        window = config.clustering_window
        self.history: Dict[str, Deque[float]] = {w: deque(maxlen=window) for w in context.worker_ids}
        self.local_history: Dict[str, Deque[float]] = {
            w: deque(maxlen=window * (config.graph.local_count + 1)) for w in context.worker_ids
        }
        self.clusters: Optional[TwoClusterResult] = None
        self.schedule: Optional[SyncSchedule] = None
        for k in range(-window, 0):
            for index, worker in enumerate(context.worker_ids):
                self.history[worker].append(context.pre_sync(index, k))
                self.local_history[worker].extend(float(d) for d in context.graph_locals(index, k))

    def role_of(self, worker_id: str) -> Role:
        return self.clusters.role_of(worker_id) if self.clusters else Role.OUTLIER

    def cluster_size(self, role: Role) -> int:
        if self.clusters is None or role is Role.OUTLIER:
            return 0
        return self.clusters.fast.size if role is Role.FAST else self.clusters.slow.size

    def recluster(self, iteration: int) -> bool:
        """Rebuild clusters and schedule; keep the previous ones on failure."""
        config = self.context.config
        ids = self.context.worker_ids
        window = TraceWindow(ids, np.array([list(self.history[w]) for w in ids]))
        local_samples = {w: list(self.local_history[w]) for w in ids}
        try:
            clusters = form_two_clusters_widening(window, config.dbscan_eps, config.dbscan_min_pts, local_samples)
            schedule = build_schedule(
                clusters.fast, clusters.slow, config.alpha, len(ids), config.payoff, config.mode
            )
        except (ClusteringError, SchedulerError, StatsError) as exc:
            logger.warning(
                "Run %d iteration %d: no new schedule (%s); keeping the previous one",
                self.context.run_index,
                iteration,
                exc,
            )
            return False
        self.clusters, self.schedule = clusters, schedule
        logger.debug(
            "Run %d iteration %d: fast=%d slow=%d outliers=%d t_s=%s",
            self.context.run_index,
            iteration,
            clusters.fast.size,
            clusters.slow.size,
            len(clusters.outliers),
            tuple(round(t, 3) for t in schedule.sync_times),
        )
        return True

    def observe(self, pre_sync: np.ndarray, locals_used: Dict[str, List[float]]) -> None:
        for index, worker in enumerate(self.context.worker_ids):
            self.history[worker].append(float(pre_sync[index]))
            self.local_history[worker].extend(locals_used.get(worker, ()))


@dataclass
class IterationTrace:
    """Protocol-level record of the last FastSync iteration, for inspection."""

    epoch: float = 0.0
    schedule: Optional[SyncSchedule] = None
    outcome: Optional[int] = None
    synced: Set[str] = field(default_factory=set)
    terminal_at: Dict[str, float] = field(default_factory=dict)
    finish: Dict[str, float] = field(default_factory=dict)
    phases: Dict[str, Phase] = field(default_factory=dict)
    received: Dict[str, Tuple[LateNotification, ...]] = field(default_factory=dict)

    @property
    def protocol_end(self) -> float:
        return max(self.terminal_at.values()) if self.terminal_at else self.epoch


class _Round:
    """Mutable state of one FastSync iteration on the event engine."""

    def __init__(self, driver: 'FastSyncSynchronizer', iteration: int, epoch: float) -> None:
        ctx = driver.context
        self.ctx = ctx
        self.controller = driver.controller
        self.schedule = driver.controller.schedule
        self.config = ctx.config
        self.rng = ctx.rng
        self.network = ctx.network
        self.epoch = epoch
        self.engine = Engine(start=epoch)
        self.ids = ctx.worker_ids
        self.pre = ctx.pre_sync_vector(iteration)
        self.states: Dict[str, WorkerState] = {}
        self.busy: Dict[str, Tuple[float, float]] = {}
        self.compute: Dict[str, float] = {}
        self.locals_used: Dict[str, List[float]] = {}
        self.finish: Dict[str, float] = {}
        self.terminal_at: Dict[str, float] = {}
        self.synced_at: Dict[int, Set[str]] = {c: set() for c in range(1, NUM_OPTIONS + 1)}
        self.outcome: Optional[int] = None
        self.notifications = 0
        # First detector per (cluster, option) by global send order.
        self.announced: Set[Tuple[Role, int]] = set()

        for index, worker in enumerate(self.ids):
            role = self.controller.role_of(worker)
            spare = ctx.spare_local(index, iteration) if role is not Role.OUTLIER else None
            self.states[worker] = new_worker(worker, role, spare)
            self.busy[worker] = (epoch, epoch + self.pre[index])
            self.compute[worker] = float(self.pre[index])
            self.locals_used[worker] = [float(d) for d in ctx.graph_locals(index, iteration)]
        for index, worker in enumerate(self.ids):
            self.engine.schedule(epoch + CHECKPOINT * self.pre[index], ('checkpoint', worker, None))
        for index, worker in enumerate(self.ids):
            self.engine.schedule(epoch + self.pre[index], ('available', worker, None))
        for option, t_s in enumerate(self.schedule.sync_times, start=1):
            self.engine.schedule(epoch + t_s, ('deadline', None, option))

    # -- lateness ----------------------------------------------------------- #

    def _predicted(self, role: Role, option: int) -> float:
        entry = self.schedule.option(option)
        bound = entry.lateness_bounds[0 if role is Role.FAST else 1]
        return self.epoch + max(entry.t_s, bound)

    def _check_lateness(self, worker: str, now: float, at_checkpoint: bool = False) -> None:
        state = self.states[worker]
        if state.terminal or state.role is Role.OUTLIER:
            return
        if state.phase.kind is PhaseKind.BEFORE:
            option = state.phase.option
        elif state.phase.kind is PhaseKind.RUNNING_LOCAL:
            option = state.phase.option + 1
        else:
            return
        if option in state.sent_late:
            return
        start, end = self.busy[worker]
        progress = 1.0 if end <= start else min(1.0, (now - start) / (end - start))
        if at_checkpoint:
            progress = max(progress, CHECKPOINT)
        snapshot = WorkerState(worker_id=worker, role=state.role, progress=progress)
        if detect_lateness(snapshot, self._predicted(state.role, option), now, start):
            self._notify(worker, option, now)

    def _notify(self, worker: str, option: int, now: float) -> None:
        state = self.states[worker]
        size = self.controller.cluster_size(state.role)
        first = (state.role, option) not in self.announced
        if size < 2:
            send = option not in state.sent_late
        else:
            send = should_send_late_notification(state, size, self.rng, first, option)
        if not send:
            return
        note = merge_notifications(LateNotification(worker, state.role, option), state.notifications)
        self.states[worker] = mark_sent(state, option)
        self.announced.add((state.role, option))
        self.notifications += 1
        for other in self.ids:
            if other == worker:
                continue
            arrival = self.network.deliver(worker, other, now, self.rng, Edge.WORKER_WORKER)
            if arrival is not Dropped:
                self.engine.schedule(arrival, ('notify', other, note))
        self._apply(worker, NotificationArrived(note), now)

    # -- protocol ----------------------------------------------------------- #

    def _apply(self, worker: str, event, now: float) -> None:
        before = self.states[worker]
        try:
            state, actions = worker_step(before, self.schedule, event, self.config.late_threshold)
        except ProtocolError as exc:
            logger.error(
                "Run %d: protocol violation for %s at %.3f ms: %s",
                self.ctx.run_index,
                worker,
                now - self.epoch,
                exc,
            )
            raise ProtocolAbort(str(exc)) from exc
        self.states[worker] = state
        for action in actions:
            if isinstance(action, ExecuteSync):
                self.synced_at[action.option].add(worker)
                self.finish[worker] = self.network.deliver(worker, None, now, self.rng, Edge.WORKER_CONTROLLER)
            elif isinstance(action, ExecuteLocal):
                self.busy[worker] = (now, now + action.duration)
                self.compute[worker] += action.duration
                self.locals_used[worker].append(action.duration)
                self.engine.schedule(now + CHECKPOINT * action.duration, ('checkpoint', worker, None))
                self.engine.schedule(now + action.duration, ('local_done', worker, None))
            elif isinstance(action, Abort):
                self.finish[worker] = max(now, self.busy[worker][1])
        if state.terminal:
            self.terminal_at.setdefault(worker, now)
        elif state.phase != before.phase:
            start, end = self.busy[worker]
            if now >= start + CHECKPOINT * (end - start):
                self._check_lateness(worker, now)

    def _deadline(self, option: int, now: float) -> None:
        at = Phase.at(option)
        present = {
            w for w in self.ids if self.states[w].phase == at and not self.network.is_isolated(w, now)
        }
        quorum = len(present) >= self.config.quorum_size
        for worker in self.ids:
            state = self.states[worker]
            if state.terminal:
                continue
            met = quorum and (state.phase.kind is not PhaseKind.AT or worker in present)
            self._apply(worker, OptionDeadlinePassed(option, met), now)
        if quorum and self.outcome is None:
            self.outcome = option

    def play(self) -> None:
        while True:
            try:
                now, (kind, worker, payload) = self.engine.advance()
            except EndOfSimulation:
                break
            if kind == 'deadline':
                self._deadline(payload, now)
                continue
            state = self.states[worker]
            if state.terminal:
                continue
            if kind == 'checkpoint':
                self._check_lateness(worker, now, at_checkpoint=True)
            elif kind == 'available':
                if state.phase.kind is PhaseKind.BEFORE:
                    self._apply(worker, ReachedSyncPoint(now - self.epoch), now)
            elif kind == 'local_done':
                if state.phase.kind is PhaseKind.RUNNING_LOCAL or (
                    state.phase.kind is PhaseKind.BEFORE and state.phase.option > 1
                ):
                    self._apply(worker, LocalTaskDone(now - self.epoch), now)
            elif kind == 'notify':
                self._apply(worker, NotificationArrived(payload), now)
        stuck = [w for w in self.ids if not self.states[w].terminal]
        if stuck:
            raise SimulationError(f"Workers {stuck} never reached a terminal phase")


class FastSyncSynchronizer(Synchronizer):
    kind = SyncKind.FASTSYNC

    def __init__(self, context: RunContext, spec: Optional[SynchronizerSpec] = None) -> None:
        super().__init__(context, spec or SynchronizerSpec(SyncKind.FASTSYNC))
        self.controller = FastSyncController(context)
        self.last_trace = IterationTrace()

    def run_iteration(self, iteration: int) -> IterationMetrics:
        ctx = self.context
        config = ctx.config
        ids = ctx.worker_ids
        n = len(ids)
        clustering_ms = 0.0
        epoch = 0.0
        decision_messages = 0
        schedule_failure = False

        if config.reclusters_at(iteration) or self.controller.schedule is None:
            clustering_ms = config.clustering_cost
            schedule_failure = not self.controller.recluster(iteration)
            epoch = clustering_ms
            if self.controller.schedule is not None:
                epoch = ctx.network.deliver(None, None, clustering_ms, ctx.rng, Edge.WORKER_CONTROLLER)
                decision_messages += 1

        report_latency = self._report_latency(n)
        if self.controller.schedule is None:
            return self._unscheduled(iteration, epoch, clustering_ms, report_latency, decision_messages)

        ctx.network.start_episodes(ids, epoch, ctx.rng)
        state = _Round(self, iteration, epoch)
        state.play()

        end = max(state.finish.values())
        outcome = state.outcome
        synced = state.synced_at[outcome] if outcome else set()
        compute = np.array([state.compute[w] for w in ids])
        communication = np.maximum(end - compute - clustering_ms, 0.0)
        self.controller.observe(state.pre, state.locals_used)
        self.last_trace = IterationTrace(
            epoch=epoch,
            schedule=state.schedule,
            outcome=outcome,
            synced=set(synced),
            terminal_at=dict(state.terminal_at),
            finish=dict(state.finish),
            phases={w: s.phase for w, s in state.states.items()},
            received={w: tuple(s.notifications) for w, s in state.states.items()},
        )
        return IterationMetrics(
            runtime_ms=end,
            sync_points=config.graph.sync_points,
            participation=len(synced) / n,
            outcome=outcome,
            failed=outcome is None,
            synced_workers=len(synced),
            computation_ms=float(compute.mean()),
            communication_ms=float(communication.mean()),
            communication_with_reports_ms=float(communication.mean() + report_latency),
            clustering_ms=clustering_ms,
            decision_messages=decision_messages + state.notifications,
            progress_messages=n * config.graph.report_count,
            notifications=state.notifications,
            schedule_failure=schedule_failure,
        )

    def _report_latency(self, n: int) -> float:
        """Mean per-worker latency of the non-blocking progress reports."""
        count = self.context.config.graph.report_count
        if count == 0:
            return 0.0
        network, rng = self.context.network, self.context.rng
        total = sum(network.delay(Edge.WORKER_CONTROLLER, rng) for _ in range(n * count))
        return total / n

    def _unscheduled(
        self,
        iteration: int,
        epoch: float,
        clustering_ms: float,
        report_latency: float,
        decision_messages: int,
    ) -> IterationMetrics:
        """No schedule was ever built: every worker computes and nobody syncs."""
        ctx = self.context
        pre = ctx.pre_sync_vector(iteration)
        end = epoch + float(pre.max())
        communication = np.maximum(end - pre - clustering_ms, 0.0)
        self.controller.observe(pre, {w: list(ctx.graph_locals(i, iteration)) for i, w in enumerate(ctx.worker_ids)})
        return IterationMetrics(
            runtime_ms=end,
            sync_points=ctx.config.graph.sync_points,
            participation=0.0,
            failed=True,
            computation_ms=float(pre.mean()),
            communication_ms=float(communication.mean()),
            communication_with_reports_ms=float(communication.mean() + report_latency),
            clustering_ms=clustering_ms,
            decision_messages=decision_messages,
            progress_messages=len(ctx.worker_ids) * ctx.config.graph.report_count,
            schedule_failure=True,
        )
