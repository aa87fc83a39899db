"""
Protocol app services

Each worker walks three sync options. At an option it either syncs with
the quorum, skips because its own cluster or the other cluster announced
itself late (optionally filling the gap with a local task), or aborts.
``worker_step`` is pure: it takes a state and one event and returns the
new state with the actions the simulator must carry out. All times are
milliseconds since the start of the iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import FrozenSet, Iterable, List, Optional, Tuple, Union

import numpy as np

from clustering.services import Role
from scheduler.services import SyncSchedule

logger = logging.getLogger(__name__)

NUM_OPTIONS = 3
CHECKPOINT = 0.5
DEFAULT_LATE_THRESHOLD = 1


class ProtocolError(Exception):
    """Domain-specific exception for the worker protocol."""


class ProtocolViolation(ProtocolError):
    """An event arrived that the worker's phase cannot accept."""


class ProtocolDomainError(ProtocolError):
    """An argument falls outside the domain of a protocol helper."""


class PhaseKind(str, Enum):
    BEFORE = 'before'
    AT = 'at'
    RUNNING_LOCAL = 'running_local'
    SYNCED = 'synced'
    ABORTED = 'aborted'


@dataclass(frozen=True)
class Phase:
    kind: PhaseKind
    option: int

    def __post_init__(self) -> None:
        if not 1 <= self.option <= NUM_OPTIONS:
            raise ProtocolDomainError(f"Options are numbered 1..{NUM_OPTIONS}, got {self.option}")
        if self.kind is PhaseKind.RUNNING_LOCAL and self.option == NUM_OPTIONS:
            raise ProtocolDomainError("No local task runs after the last option")

    @classmethod
    def before(cls, option: int) -> 'Phase':
        return cls(PhaseKind.BEFORE, option)

    @classmethod
    def at(cls, option: int) -> 'Phase':
        return cls(PhaseKind.AT, option)

    @classmethod
    def running_local(cls, option: int) -> 'Phase':
        return cls(PhaseKind.RUNNING_LOCAL, option)

    @classmethod
    def synced(cls, option: int) -> 'Phase':
        return cls(PhaseKind.SYNCED, option)

    @classmethod
    def aborted(cls, option: int) -> 'Phase':
        return cls(PhaseKind.ABORTED, option)

    @property
    def terminal(self) -> bool:
        return self.kind in (PhaseKind.SYNCED, PhaseKind.ABORTED)

    def __str__(self) -> str:
        return f"{self.kind.value}_{self.option}"


ALL_PHASES: Tuple[Phase, ...] = tuple(
    Phase(kind, option)
    for option in range(1, NUM_OPTIONS + 1)
    for kind in PhaseKind
    if not (kind is PhaseKind.RUNNING_LOCAL and option == NUM_OPTIONS)
)


@dataclass(frozen=True)
class LateNotification:
    origin_worker: str
    origin_cluster: Role
    option_index: int
    sequence: int = 1
    embedded: Tuple['LateNotification', ...] = ()

    @property
    def key(self) -> Tuple[str, str, int, int]:
        return (self.origin_worker, self.origin_cluster.value, self.option_index, self.sequence)

    def summary(self) -> 'LateNotification':
        return replace(self, embedded=())


@dataclass(frozen=True)
class WorkerState:
    worker_id: str
    role: Role
    phase: Phase = Phase(PhaseKind.BEFORE, 1)
    t_av: Optional[float] = None
    local_duration: Optional[float] = None
    notifications: FrozenSet[LateNotification] = frozenset()
    sent_late: FrozenSet[int] = frozenset()
    progress: float = 0.0

    @property
    def terminal(self) -> bool:
        return self.phase.terminal


# --------------------------------------------------------------------------- #
# Events and actions                                                          #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ReachedSyncPoint:
    time: float


@dataclass(frozen=True)
class LocalTaskDone:
    time: float


@dataclass(frozen=True)
class NotificationArrived:
    notification: LateNotification


@dataclass(frozen=True)
class OptionDeadlinePassed:
    option: int
    quorum_met: bool = False


Event = Union[ReachedSyncPoint, LocalTaskDone, NotificationArrived, OptionDeadlinePassed]


@dataclass(frozen=True)
class ExecuteSync:
    option: int


@dataclass(frozen=True)
class ExecuteLocal:
    duration: float


@dataclass(frozen=True)
class SendNotification:
    option: int


@dataclass(frozen=True)
class Abort:
    option: int


@dataclass(frozen=True)
class ProceedToOption:
    option: int


Action = Union[ExecuteSync, ExecuteLocal, SendNotification, Abort, ProceedToOption]


# --------------------------------------------------------------------------- #
# Lateness detection and notifications                                        #
# --------------------------------------------------------------------------- #


def detect_lateness(state: WorkerState, predicted_finish: float, now: float, started: float = 0.0) -> bool:
    """Extrapolate the elapsed time linearly once half the task is done."""
    if state.progress < CHECKPOINT or state.progress <= 0:
        return False
    projected = started + (now - started) / state.progress
    return projected > predicted_finish


def should_send_late_notification(
    state: WorkerState,
    cluster_size: int,
    rng: np.random.Generator,
    is_first_detector: bool,
    option: Optional[int] = None,
) -> bool:
    """First detector always sends; later ones send with probability 2/(N-1)."""
    if cluster_size < 2:
        raise ProtocolDomainError(f"Cluster size must be >= 2 to send notifications, got {cluster_size}")
    option = state.phase.option if option is None else option
    if state.role is Role.OUTLIER or option in state.sent_late:
        return False
    if is_first_detector:
        return True
    return bool(rng.random() < min(1.0, 2.0 / (cluster_size - 1)))


def merge_notifications(new: LateNotification, history: Iterable[LateNotification]) -> LateNotification:
    """Embed every earlier notification from the same cluster and option."""
    prior = sorted(
        {
            note.key: note.summary()
            for note in reconstruct(history)
            if note.origin_cluster is new.origin_cluster and note.option_index == new.option_index
        }.values(),
        key=lambda note: (note.sequence, note.origin_worker),
    )
    return replace(new, sequence=len(prior) + 1, embedded=tuple(prior))


def reconstruct(received: Iterable[LateNotification]) -> List[LateNotification]:
    """Distinct notifications held, counting embedded copies."""
    seen = {}
    for note in received:
        seen.setdefault(note.key, note.summary())
        for inner in note.embedded:
            seen.setdefault(inner.key, inner.summary())
    return list(seen.values())


def notification_count(
    received: Iterable[LateNotification],
    option_index: int,
    cluster: Optional[Role] = None,
) -> int:
    return sum(
        1
        for note in reconstruct(received)
        if note.option_index == option_index and (cluster is None or note.origin_cluster is cluster)
    )


def cluster_is_late(
    received: Iterable[LateNotification],
    option_index: int,
    cluster: Optional[Role] = None,
    threshold: int = DEFAULT_LATE_THRESHOLD,
) -> bool:
    if threshold < 1:
        raise ProtocolDomainError(f"Late threshold must be >= 1, got {threshold}")
    return notification_count(received, option_index, cluster) >= threshold


# --------------------------------------------------------------------------- #
# State machine                                                               #
# --------------------------------------------------------------------------- #


def _other_clusters(role: Role) -> List[Role]:
    if role is Role.FAST:
        return [Role.SLOW]
    if role is Role.SLOW:
        return [Role.FAST]
    return [Role.FAST, Role.SLOW]


def _move(state: WorkerState, phase: Phase) -> WorkerState:
    return replace(state, phase=phase, progress=0.0 if phase.kind is PhaseKind.BEFORE else state.progress)


def _next_or_abort(state: WorkerState, kind: PhaseKind, actions: List[Action]) -> WorkerState:
    option = state.phase.option
    if option == NUM_OPTIONS:
        actions.append(Abort(option))
        return _move(state, Phase.aborted(option))
    actions.append(ProceedToOption(option + 1))
    return _move(state, Phase(kind, option + 1))


def _settle(state: WorkerState, schedule: SyncSchedule, threshold: int, actions: List[Action]) -> WorkerState:
    """React to held notifications for the current option until nothing changes."""
    while state.phase.kind in (PhaseKind.BEFORE, PhaseKind.AT):
        option = state.phase.option
        own_late = state.role is not Role.OUTLIER and cluster_is_late(
            state.notifications, option, state.role, threshold
        )
        other_late = any(
            cluster_is_late(state.notifications, option, other, threshold)
            for other in _other_clusters(state.role)
        )
        if not (own_late or other_late):
            break
        if option == NUM_OPTIONS:
            actions.append(Abort(option))
            return _move(state, Phase.aborted(option))
        if (
            state.phase.kind is PhaseKind.AT
            and not own_late
            and state.role is not Role.OUTLIER
            and state.local_duration is not None
            and state.local_duration <= schedule.option(option).t_s - state.t_av
        ):
            actions.append(ExecuteLocal(state.local_duration))
            actions.append(ProceedToOption(option + 1))
            return _move(state, Phase.running_local(option))
        state = _next_or_abort(state, state.phase.kind, actions)
    return state


def _violation(state: WorkerState, event: Event) -> ProtocolViolation:
    return ProtocolViolation(f"Worker {state.worker_id} in {state.phase} cannot accept {event!r}")


def worker_step(
    state: WorkerState,
    schedule: SyncSchedule,
    event: Event,
    late_threshold: int = DEFAULT_LATE_THRESHOLD,
) -> Tuple[WorkerState, List[Action]]:
    """
    Advance one worker by one event.

    At an option's deadline an on-time worker syncs when the quorum is
    present and aborts otherwise; a worker still computing either misses a
    sync that happened or follows everyone to the next option. Late
    notifications for the current option move the worker on early: its own
    cluster being late means proceeding, the other cluster being late means
    running a local task when ``local_duration <= t_s - t_av`` and then
    proceeding. Nothing survives the third option.
    """
    if state.terminal:
        raise _violation(state, event)
    phase = state.phase
    actions: List[Action] = []

    if isinstance(event, ReachedSyncPoint):
        if phase.kind is not PhaseKind.BEFORE:
            raise _violation(state, event)
        state = replace(_move(state, Phase.at(phase.option)), t_av=event.time, progress=1.0)
        return _settle(state, schedule, late_threshold, actions), actions

    if isinstance(event, LocalTaskDone):
        if phase.kind is PhaseKind.RUNNING_LOCAL:
            target = Phase.at(phase.option + 1)
        elif phase.kind is PhaseKind.BEFORE and phase.option > 1:
            target = Phase.at(phase.option)
        else:
            raise _violation(state, event)
        state = replace(_move(state, target), t_av=event.time, local_duration=None)
        return _settle(state, schedule, late_threshold, actions), actions

    if isinstance(event, NotificationArrived):
        note = event.notification
        state = replace(state, notifications=state.notifications | {note})
        if note.option_index != phase.option or phase.kind is PhaseKind.RUNNING_LOCAL:
            return state, actions
        return _settle(state, schedule, late_threshold, actions), actions

    if isinstance(event, OptionDeadlinePassed):
        option = event.option
        if phase.kind is PhaseKind.RUNNING_LOCAL:
            if option <= phase.option:
                return state, actions
            if option != phase.option + 1:
                raise _violation(state, event)
            if option == NUM_OPTIONS:
                actions.append(Abort(option))
                return _move(state, Phase.aborted(option)), actions
            actions.append(ProceedToOption(option + 1))
            state = _move(state, Phase.before(option + 1))
            return _settle(state, schedule, late_threshold, actions), actions
        if option < phase.option:
            return state, actions
        if option > phase.option:
            raise _violation(state, event)
        if phase.kind is PhaseKind.AT:
            if event.quorum_met:
                actions.append(ExecuteSync(option))
                return _move(state, Phase.synced(option)), actions
            actions.append(Abort(option))
            return _move(state, Phase.aborted(option)), actions
        if event.quorum_met:
            actions.append(Abort(option))
            return _move(state, Phase.aborted(option)), actions
        state = _next_or_abort(state, PhaseKind.BEFORE, actions)
        return _settle(state, schedule, late_threshold, actions), actions

    raise _violation(state, event)


def mark_sent(state: WorkerState, option: int) -> WorkerState:
    return replace(state, sent_late=state.sent_late | {option})


def new_worker(worker_id: str, role: Role, local_duration: Optional[float] = None) -> WorkerState:
    return WorkerState(worker_id=worker_id, role=role, local_duration=local_duration)
