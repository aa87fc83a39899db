"""
Game app services

The extensive-form game two worker clusters play at every iteration. Each
of three passes offers one sync option; a cluster either syncs, skips as
late, or skips after a late notification (optionally running a local
task). Payoffs accumulate across passes and the optimal profile is found
by walking the whole tree, which never has more than 3^6 leaves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

NUM_OPTIONS = 3
NUM_PLAYERS = 2
PAYOFF_TOLERANCE = 1e-9


class GameError(Exception):
    """Domain-specific exception for game evaluation failures."""


class GameDomainError(GameError):
    """An argument falls outside the domain of a payoff function."""


class InvalidParametersError(GameError):
    """Utilities or abort costs break the feasibility rules."""


class Decision(str, Enum):
    WAIT_FOR_SYNC = 'wait_for_sync'
    RUN_LOCAL_TASK = 'run_local_task'


class Strategy(str, Enum):
    SYNC = 'sync'
    NO_SYNC_LATE = 'no_sync_late'
    NO_SYNC_LATE_NOTIFICATION = 'no_sync_late_notification'


class Lateness(str, Enum):
    ON_TIME = 'on_time'
    LATE_NOTIFIED = 'late_notified'
    LATE_SILENT = 'late_silent'


class Terminal(str, Enum):
    SYNCED = 'synced'
    ABORTED = 'aborted'


# Enumeration order doubles as the final tie-break.
STRATEGY_ORDER = (Strategy.SYNC, Strategy.NO_SYNC_LATE_NOTIFICATION, Strategy.NO_SYNC_LATE)


@dataclass(frozen=True)
class PayoffParameters:
    """Per-option utilities U_c, abort costs F_c and the linear cost rates."""

    sync_utils: Tuple[float, float, float] = (100.0, 60.0, 30.0)
    abort_costs: Tuple[float, float, float] = (5.0, 10.0, 20.0)
    wait_rate: float = 1.0
    local_rate: float = 1.0
    pre_notify_wait_rate: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'sync_utils', tuple(float(u) for u in self.sync_utils))
        object.__setattr__(self, 'abort_costs', tuple(float(f) for f in self.abort_costs))
        if len(self.sync_utils) != NUM_OPTIONS or len(self.abort_costs) != NUM_OPTIONS:
            raise InvalidParametersError("Exactly three utilities and three abort costs are required")
        for name in ('wait_rate', 'local_rate', 'pre_notify_wait_rate'):
            if getattr(self, name) < 0:
                raise InvalidParametersError(f"{name} must be >= 0")

    def validation_errors(self, n_sync: int = NUM_PLAYERS, max_local: float = 0.0) -> List[str]:
        errors = []
        s1, s2, s3 = (sync_utility(u, n_sync) for u in self.sync_utils)
        local = local_task_utility(max_local, self)
        if not s1 > s2 > s3:
            errors.append(f"Sync utilities must strictly decrease: S = ({s1:g}, {s2:g}, {s3:g})")
        if not s1 > s2 + local > s3 + local:
            errors.append(
                f"S1 > S2 + L > S3 + L fails for L({max_local:g}) = {local:g}: "
                f"({s1:g}, {s2 + local:g}, {s3 + local:g})"
            )
        f1, f2, f3 = self.abort_costs
        if not f1 < f2 < f3:
            errors.append(f"Abort costs must strictly increase: F = ({f1:g}, {f2:g}, {f3:g})")
        return errors

    def validate(self, n_sync: int = NUM_PLAYERS, max_local: float = 0.0) -> 'PayoffParameters':
        errors = self.validation_errors(n_sync, max_local)
        if errors:
            raise InvalidParametersError("; ".join(errors))
        return self

    def to_dict(self) -> Dict[str, object]:
        return {
            'sync_utils': list(self.sync_utils),
            'abort_costs': list(self.abort_costs),
            'wait_rate': self.wait_rate,
            'local_rate': self.local_rate,
            'pre_notify_wait_rate': self.pre_notify_wait_rate,
        }


# --------------------------------------------------------------------------- #
# Payoff functions                                                            #
# --------------------------------------------------------------------------- #


def _duration(t: float, name: str) -> float:
    if not math.isfinite(t) or t < 0:
        raise GameDomainError(f"{name} must be a finite duration >= 0, got {t}")
    return float(t)


def sync_utility(utility: float, n_sync: int) -> float:
    if n_sync < 1:
        raise GameDomainError(f"Sync utility is shared by at least one participant, got {n_sync}")
    return utility / n_sync


def waiting_cost(t: float, params: PayoffParameters) -> float:
    return params.wait_rate * _duration(t, 'wait')


def local_task_utility(t_l: float, params: PayoffParameters) -> float:
    return params.local_rate * _duration(t_l, 'local task duration')


def notify_wait_cost(t: float, params: PayoffParameters) -> float:
    """Cost of waiting between scheduled availability and a late notification."""
    return params.pre_notify_wait_rate * _duration(t, 'notification delay')


def cluster_decision(local_duration: float, expected_wait: float, params: PayoffParameters) -> Decision:
    """Run a local task only when it is worth strictly more than the wait it fills."""
    if local_task_utility(local_duration, params) > waiting_cost(expected_wait, params):
        return Decision.RUN_LOCAL_TASK
    return Decision.WAIT_FOR_SYNC


# --------------------------------------------------------------------------- #
# Scenarios                                                                   #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PassConditions:
    """
    What chance dealt the clusters at one pass.

    ``waits[i]`` is how long cluster i waits if it commits to this option;
    ``local_durations[i]`` is the local task it could run instead (``None``
    when none is available); ``notify_delay`` is the time an on-time
    cluster spends before a late notification reaches it.
    """

    lateness: Tuple[Lateness, Lateness] = (Lateness.ON_TIME, Lateness.ON_TIME)
    waits: Tuple[float, float] = (0.0, 0.0)
    local_durations: Tuple[Optional[float], Optional[float]] = (None, None)
    notify_delay: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'lateness', tuple(Lateness(value) for value in self.lateness))
        for wait in self.waits:
            _duration(wait, 'wait')
        for local in self.local_durations:
            if local is not None:
                _duration(local, 'local task duration')
        _duration(self.notify_delay, 'notification delay')


@dataclass(frozen=True)
class Scenario:
    passes: Tuple[PassConditions, PassConditions, PassConditions]
    name: str = ''

    def __post_init__(self) -> None:
        if len(self.passes) != NUM_OPTIONS:
            raise GameDomainError(f"A scenario covers exactly {NUM_OPTIONS} passes")

    @property
    def max_local(self) -> float:
        durations = [d for conditions in self.passes for d in conditions.local_durations if d is not None]
        return max(durations, default=0.0)

    @classmethod
    def all_on_time(cls, wait: float = 0.0) -> 'Scenario':
        on_time = PassConditions(waits=(wait, wait))
        return cls(passes=(on_time, on_time, on_time), name='all_on_time')

    @classmethod
    def stuck(cls, wait: float = 0.0) -> 'Scenario':
        """Slow cluster never shows up and never says so."""
        conditions = PassConditions(lateness=(Lateness.ON_TIME, Lateness.LATE_SILENT), waits=(wait, 0.0))
        return cls(passes=(conditions, conditions, conditions), name='stuck')

    @classmethod
    def late_with_notification(
        cls,
        expected_wait: float,
        local_duration: float,
        notify_delay: float = 0.0,
        wait: float = 0.0,
    ) -> 'Scenario':
        """Slow cluster notifies at pass 1 and is available for pass 2."""
        first = PassConditions(
            lateness=(Lateness.ON_TIME, Lateness.LATE_NOTIFIED),
            waits=(expected_wait, 0.0),
            local_durations=(local_duration, None),
            notify_delay=notify_delay,
        )
        rest = PassConditions(waits=(wait, wait))
        return cls(passes=(first, rest, rest), name='late_with_notification')

    @classmethod
    def both_late_first(cls, wait: float = 0.0) -> 'Scenario':
        first = PassConditions(lateness=(Lateness.LATE_SILENT, Lateness.LATE_SILENT))
        rest = PassConditions(waits=(wait, wait))
        return cls(passes=(first, rest, rest), name='both_late_first')


def feasible_strategies(own: Lateness, other: Lateness) -> List[Strategy]:
    """Late clusters can only skip; on-time clusters may sync or feign lateness."""
    if own is not Lateness.ON_TIME:
        return [Strategy.NO_SYNC_LATE]
    allowed = [Strategy.SYNC]
    if other is Lateness.LATE_NOTIFIED:
        allowed.append(Strategy.NO_SYNC_LATE_NOTIFICATION)
    allowed.append(Strategy.NO_SYNC_LATE)
    return [strategy for strategy in STRATEGY_ORDER if strategy in allowed]


# --------------------------------------------------------------------------- #
# Payoff accounting                                                           #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PassResult:
    increments: Tuple[float, float]
    terminal: Optional[Terminal]


def pass_payoffs(
    params: PayoffParameters,
    option: int,
    conditions: PassConditions,
    profile: Tuple[Strategy, Strategy],
) -> PassResult:
    """
    Payoff increments of one pass for a joint strategy.

    Both sync: each earns S_c minus its wait. One syncs alone: the option
    aborts, both pay F_c and the lone syncer also pays its wait. Neither
    syncs: the option is skipped, or aborts with F_3 at the last pass.
    A skip after a notification earns L(t_l) when the decision rule runs
    the local task. An on-time cluster always pays the notification delay
    when the other cluster announced itself late.
    """
    index = option - 1
    utility = sync_utility(params.sync_utils[index], NUM_PLAYERS)
    abort_cost = params.abort_costs[index]
    increments = [0.0, 0.0]

    for player in range(NUM_PLAYERS):
        other = 1 - player
        if (
            conditions.lateness[player] is Lateness.ON_TIME
            and conditions.lateness[other] is Lateness.LATE_NOTIFIED
        ):
            increments[player] -= notify_wait_cost(conditions.notify_delay, params)

    syncing = [strategy is Strategy.SYNC for strategy in profile]
    if all(syncing):
        for player in range(NUM_PLAYERS):
            increments[player] += utility - waiting_cost(conditions.waits[player], params)
        return PassResult((increments[0], increments[1]), Terminal.SYNCED)

    if any(syncing):
        for player in range(NUM_PLAYERS):
            increments[player] -= abort_cost
            if syncing[player]:
                increments[player] -= waiting_cost(conditions.waits[player], params)
        return PassResult((increments[0], increments[1]), Terminal.ABORTED)

    for player in range(NUM_PLAYERS):
        local = conditions.local_durations[player]
        if profile[player] is Strategy.NO_SYNC_LATE_NOTIFICATION and local is not None:
            if cluster_decision(local, conditions.waits[player], params) is Decision.RUN_LOCAL_TASK:
                increments[player] += local_task_utility(local, params)

    if option == NUM_OPTIONS:
        for player in range(NUM_PLAYERS):
            increments[player] -= abort_cost
        return PassResult((increments[0], increments[1]), Terminal.ABORTED)
    return PassResult((increments[0], increments[1]), None)


# --------------------------------------------------------------------------- #
# Enumeration                                                                 #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class GameOutcome:
    path: Tuple[Tuple[Strategy, Strategy], ...]
    v1: float
    v2: float
    terminal: Terminal
    option: int
    increments: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)
    order: int = field(default=0, compare=False, repr=False)

    @property
    def p(self) -> float:
        return self.v1 + self.v2

    @property
    def synced(self) -> bool:
        return self.terminal is Terminal.SYNCED

    def to_dict(self) -> Dict[str, object]:
        return {
            'path': [[s1.value, s2.value] for s1, s2 in self.path],
            'v1': self.v1,
            'v2': self.v2,
            'p': self.p,
            'terminal': self.terminal.value,
            'option': self.option,
        }


def enumerate_game(
    params: PayoffParameters,
    scenario: Scenario,
    max_local: Optional[float] = None,
) -> List[GameOutcome]:
    """Every feasible strategy path through the three passes, in enumeration order."""
    params.validate(NUM_PLAYERS, scenario.max_local if max_local is None else max_local)
    outcomes: List[GameOutcome] = []

    def walk(option: int, path: list, increments: list, totals: Tuple[float, float]) -> None:
        conditions = scenario.passes[option - 1]
        first = feasible_strategies(conditions.lateness[0], conditions.lateness[1])
        second = feasible_strategies(conditions.lateness[1], conditions.lateness[0])
        for s1 in first:
            for s2 in second:
                result = pass_payoffs(params, option, conditions, (s1, s2))
                step_path = path + [(s1, s2)]
                step_increments = increments + [result.increments]
                v1 = totals[0] + result.increments[0]
                v2 = totals[1] + result.increments[1]
                if result.terminal is None:
                    walk(option + 1, step_path, step_increments, (v1, v2))
                    continue
                outcomes.append(
                    GameOutcome(
                        path=tuple(step_path),
                        v1=v1,
                        v2=v2,
                        terminal=result.terminal,
                        option=option,
                        increments=tuple(step_increments),
                        order=len(outcomes),
                    )
                )

    walk(1, [], [], (0.0, 0.0))
    logger.debug("Enumerated %d outcomes for scenario %s", len(outcomes), scenario.name or '<custom>')
    return outcomes


def select_optimal(outcomes: Sequence[GameOutcome]) -> GameOutcome:
    """Maximum P; ties go to the earliest option, then sync over abort."""
    if not outcomes:
        raise GameDomainError("No outcomes to choose from")
    best = max(outcome.p for outcome in outcomes)
    candidates = [outcome for outcome in outcomes if outcome.p >= best - PAYOFF_TOLERANCE]
    return min(candidates, key=lambda outcome: (outcome.option, not outcome.synced, outcome.order))


def optimal_profile(
    params: PayoffParameters,
    scenario: Scenario,
    max_local: Optional[float] = None,
) -> GameOutcome:
    return select_optimal(enumerate_game(params, scenario, max_local))
