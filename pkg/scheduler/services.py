"""
Scheduler app services

Fixes the three sync options from two cluster models:

- option 1 uses one shared percentile on both early components,
- option 2 lets the fast cluster fill its expected wait with a local task
  and searches a percentile pair for the slow cluster's late component,
- option 3 switches the fast cluster to its late local-task law and lets
  the slow cluster run a local task of its own.

Options 2 and 3 are solved by an exhaustive scan of a 101 x 101 percentile
grid. ``literal`` composition adds the first-option threshold to the summed
distribution's quantile; ``corrected`` uses the summed quantile alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from clustering.services import ClusterModel
from game.services import Decision, PayoffParameters, cluster_decision, local_task_utility
from stats.services import Gaussian, gaussian_quantile, gaussian_quantiles

logger = logging.getLogger(__name__)

P_MIN = 0.5
P_MAX = 0.999
P_STEP = 0.005
PERCENTILE_GRID = np.round(np.append(np.arange(P_MIN, P_MAX, P_STEP), P_MAX), 6)
QUORUM_TOLERANCE = 1e-9
TIE_TOLERANCE = 1e-9
MONOTONE_TOLERANCE = 1e-9

_ZERO = Gaussian(0.0, 0.0)


class SchedulerError(Exception):
    """Domain-specific exception for schedule construction failures."""


class SchedulerDomainError(SchedulerError):
    """Quorum ratio, worker count or percentile outside its domain."""


class InfeasibleScheduleError(SchedulerError):
    """The two clusters cannot reach the quorum even at full participation."""


class InternalConsistencyError(SchedulerError):
    """A built schedule breaks an invariant the construction guarantees."""


class CompositionMode(str, Enum):
    LITERAL = 'literal'
    CORRECTED = 'corrected'


@dataclass(frozen=True)
class OptionEntry:
    option: int
    t_s: float
    thresholds: Tuple[float, float]
    percentiles: Tuple[float, float]
    local_task_planned: Tuple[bool, bool] = (False, False)
    lateness_bounds: Tuple[float, float] = (0.0, 0.0)
    participation: float = 0.0
    saturated: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            'option': self.option,
            't_s': self.t_s,
            'thresholds': list(self.thresholds),
            'percentiles': list(self.percentiles),
            'local_task_planned': list(self.local_task_planned),
            'lateness_bounds': list(self.lateness_bounds),
            'participation': self.participation,
            'saturated': self.saturated,
        }


@dataclass(frozen=True)
class OptionDerivation:
    expected_wait_w2: float = 0.0
    expected_wait_w1: float = 0.0
    expected_local_1: float = 0.0
    expected_local_2: float = 0.0
    decision_1: Decision = Decision.WAIT_FOR_SYNC
    decision_2: Decision = Decision.WAIT_FOR_SYNC
    local_model_missing: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            'expected_wait_w2': self.expected_wait_w2,
            'expected_wait_w1': self.expected_wait_w1,
            'expected_local_1': self.expected_local_1,
            'expected_local_2': self.expected_local_2,
            'decision_1': self.decision_1.value,
            'decision_2': self.decision_2.value,
            'local_model_missing': self.local_model_missing,
        }


@dataclass(frozen=True)
class SyncSchedule:
    """The three options broadcast to every worker for an iteration."""

    options: Tuple[OptionEntry, OptionEntry, OptionEntry]
    alpha: float
    n_total: int
    mode: CompositionMode = CompositionMode.LITERAL
    derivation: OptionDerivation = OptionDerivation()

    def option(self, index: int) -> OptionEntry:
        if not 1 <= index <= len(self.options):
            raise SchedulerDomainError(f"Sync options are numbered 1..3, got {index}")
        return self.options[index - 1]

    @property
    def sync_times(self) -> Tuple[float, ...]:
        return tuple(entry.t_s for entry in self.options)

    @property
    def saturated(self) -> bool:
        return any(entry.saturated for entry in self.options)

    @property
    def quorum(self) -> float:
        return self.alpha * self.n_total

    def to_rows(self) -> List[Dict[str, object]]:
        rows = []
        for entry in self.options:
            rows.append(
                {
                    'option': entry.option,
                    't_s': entry.t_s,
                    'threshold_fast': entry.thresholds[0],
                    'threshold_slow': entry.thresholds[1],
                    'percentile_fast': entry.percentiles[0],
                    'percentile_slow': entry.percentiles[1],
                    'local_fast': entry.local_task_planned[0],
                    'local_slow': entry.local_task_planned[1],
                    'bound_fast': entry.lateness_bounds[0],
                    'bound_slow': entry.lateness_bounds[1],
                    'saturated': entry.saturated,
                }
            )
        return rows

    def to_dict(self) -> Dict[str, object]:
        return {
            'alpha': self.alpha,
            'n_total': self.n_total,
            'mode': self.mode.value,
            'options': [entry.to_dict() for entry in self.options],
            'derivation': self.derivation.to_dict(),
        }


# --------------------------------------------------------------------------- #
# Helpers                                                                     #
# --------------------------------------------------------------------------- #


def _check_quorum(fast: ClusterModel, slow: ClusterModel, alpha: float, n_total: int) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise SchedulerDomainError(f"alpha must be in [0, 1], got {alpha}")
    if n_total < 1:
        raise SchedulerDomainError(f"Worker count must be >= 1, got {n_total}")
    total = fast.size + slow.size
    if total > n_total:
        raise SchedulerDomainError(f"Clusters hold {total} workers but N = {n_total}")
    quorum = alpha * n_total
    if total < quorum - QUORUM_TOLERANCE:
        raise InfeasibleScheduleError(
            f"Quorum alpha*N = {quorum:g} exceeds the {total} workers in the two clusters"
        )
    return quorum


def _mode(mode) -> CompositionMode:
    return CompositionMode(mode)


def _grid_search(
    thresholds: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]],
    sizes: Tuple[int, int],
    quorum: float,
    floor: float,
) -> Tuple[int, int, bool]:
    """
    Index pair minimizing max(fast, slow) over the percentile grid.

    Candidates must meet the quorum and not undercut the previous option.
    Ties prefer the larger expected participation. When no pair reaches the
    quorum the schedule saturates at (P_MAX, P_MAX).
    """
    p1 = PERCENTILE_GRID[:, None]
    p2 = PERCENTILE_GRID[None, :]
    fast, slow = thresholds(p1, p2)
    t = np.maximum(np.broadcast_to(fast, (p1.size, p2.size)), np.broadcast_to(slow, (p1.size, p2.size)))
    participation = p1 * sizes[0] + p2 * sizes[1]
    feasible = (participation >= quorum - QUORUM_TOLERANCE) & (t >= floor)
    if not feasible.any():
        last = PERCENTILE_GRID.size - 1
        return last, last, True

    masked = np.where(feasible, t, np.inf)
    best = masked.min()
    ties = feasible & (masked <= best + TIE_TOLERANCE)
    flat = int(np.argmax(np.where(ties, participation, -np.inf)))
    i, j = np.unravel_index(flat, t.shape)
    return int(i), int(j), False


def _local_or_zero(component: Optional[Gaussian]) -> Gaussian:
    return _ZERO if component is None else component


# --------------------------------------------------------------------------- #
# Option 1                                                                    #
# --------------------------------------------------------------------------- #


def fix_first_option(fast: ClusterModel, slow: ClusterModel, alpha: float, n_total: int) -> OptionEntry:
    """Shared minimal percentile p = alpha*N / (|C1| + |C2|), clamped to [P_MIN, P_MAX]."""
    _check_quorum(fast, slow, alpha, n_total)
    raw = alpha * n_total / (fast.size + slow.size)
    saturated = raw > P_MAX
    p = float(min(max(raw, P_MIN), P_MAX))
    if saturated:
        logger.warning("Option 1 percentile %.4f saturated at %.3f", raw, P_MAX)

    x1 = gaussian_quantile(fast.model.early, p)
    x2 = gaussian_quantile(slow.model.early, p)
    bounds = (
        gaussian_quantile(fast.model.early, P_MAX),
        gaussian_quantile(slow.model.early, P_MAX),
    )
    return OptionEntry(
        option=1,
        t_s=max(x1, x2),
        thresholds=(x1, x2),
        percentiles=(p, p),
        lateness_bounds=bounds,
        participation=p * (fast.size + slow.size),
        saturated=saturated,
    )


# --------------------------------------------------------------------------- #
# Option 2                                                                    #
# --------------------------------------------------------------------------- #


def _second_thresholds(fast, slow, x1, p1, p2, params, mode):
    mode = _mode(mode)
    x2 = gaussian_quantiles(slow.model.late, p2)
    wait = np.maximum(0.0, x2 - x1)
    local = fast.model.local_early
    if local is None:
        run = np.zeros(np.shape(wait), dtype=bool)
        local_mean = 0.0
    else:
        local_mean = local.mean
        run = local_task_utility(local_mean, params) > params.wait_rate * wait
    offset = x1 if mode is CompositionMode.LITERAL else 0.0
    x1_run = offset + gaussian_quantiles(fast.model.early + _local_or_zero(local), p1)
    return np.where(run, x1_run, x1), x2, wait, local_mean


def second_option_at(
    fast: ClusterModel,
    slow: ClusterModel,
    option1: OptionEntry,
    p1: float,
    p2: float,
    params: PayoffParameters,
    mode: CompositionMode = CompositionMode.LITERAL,
) -> Tuple[Tuple[float, float], OptionDerivation]:
    """Option-2 thresholds (X'1, X'2) at a given percentile pair."""
    x1 = option1.thresholds[0]
    x1p, x2p, wait, local_mean = _second_thresholds(fast, slow, x1, p1, p2, params, mode)
    missing = fast.model.local_early is None
    decision = Decision.WAIT_FOR_SYNC if missing else cluster_decision(local_mean, float(wait), params)
    derivation = OptionDerivation(
        expected_wait_w2=float(wait),
        expected_local_1=local_mean,
        decision_1=decision,
        local_model_missing=missing,
    )
    return (float(x1p), float(x2p)), derivation


def fix_second_option(
    fast: ClusterModel,
    slow: ClusterModel,
    alpha: float,
    n_total: int,
    option1: OptionEntry,
    params: PayoffParameters,
    mode: CompositionMode = CompositionMode.LITERAL,
) -> Tuple[OptionEntry, OptionDerivation]:
    quorum = _check_quorum(fast, slow, alpha, n_total)
    x1 = option1.thresholds[0]

    def thresholds(p1, p2):
        x1p, x2p, _, _ = _second_thresholds(fast, slow, x1, p1, p2, params, mode)
        return x1p, x2p

    i, j, saturated = _grid_search(thresholds, (fast.size, slow.size), quorum, option1.t_s)
    p1, p2 = float(PERCENTILE_GRID[i]), float(PERCENTILE_GRID[j])
    (x1p, x2p), derivation = second_option_at(fast, slow, option1, p1, p2, params, mode)
    if derivation.local_model_missing:
        logger.warning("Fast cluster has no local-task model; option 2 waits for sync")
    if saturated:
        logger.warning("Option 2 quorum unreachable; percentiles saturated at %.3f", P_MAX)

    (bound1, bound2), _ = second_option_at(fast, slow, option1, P_MAX, P_MAX, params, mode)
    if derivation.decision_1 is Decision.WAIT_FOR_SYNC:
        bound1 = option1.lateness_bounds[0]
    entry = OptionEntry(
        option=2,
        t_s=max(x1p, x2p),
        thresholds=(x1p, x2p),
        percentiles=(p1, p2),
        local_task_planned=(derivation.decision_1 is Decision.RUN_LOCAL_TASK, False),
        lateness_bounds=(
            max(bound1, option1.lateness_bounds[0]),
            max(bound2, option1.lateness_bounds[1]),
        ),
        participation=p1 * fast.size + p2 * slow.size,
        saturated=saturated,
    )
    return entry, derivation


# --------------------------------------------------------------------------- #
# Option 3                                                                    #
# --------------------------------------------------------------------------- #


def _third_thresholds(fast, slow, x1, x2p, p1, p2, params, mode):
    mode = _mode(mode)
    literal = mode is CompositionMode.LITERAL
    fast_law = fast.model.early + _local_or_zero(fast.model.local_late)
    x1pp = (x1 if literal else 0.0) + gaussian_quantiles(fast_law, p1)
    wait = np.maximum(0.0, x1pp - x2p)
    local = slow.model.local_early
    if local is None:
        run = np.zeros(np.shape(wait), dtype=bool)
        local_mean = 0.0
    else:
        local_mean = local.mean
        run = local_task_utility(local_mean, params) > params.wait_rate * wait
    x2_run = (x2p if literal else 0.0) + gaussian_quantiles(slow.model.late + _local_or_zero(local), p2)
    return x1pp, np.where(run, x2_run, x2p), wait, local_mean


def third_option_at(
    fast: ClusterModel,
    slow: ClusterModel,
    option1: OptionEntry,
    option2: OptionEntry,
    p1: float,
    p2: float,
    params: PayoffParameters,
    mode: CompositionMode = CompositionMode.LITERAL,
    derivation: Optional[OptionDerivation] = None,
) -> Tuple[Tuple[float, float], OptionDerivation]:
    """Option-3 thresholds (X''1, X''2) at a given percentile pair."""
    x1pp, x2pp, wait, local_mean = _third_thresholds(
        fast, slow, option1.thresholds[0], option2.thresholds[1], p1, p2, params, mode
    )
    missing = slow.model.local_early is None or fast.model.local_late is None
    decision = (
        Decision.WAIT_FOR_SYNC
        if slow.model.local_early is None
        else cluster_decision(local_mean, float(wait), params)
    )
    base = derivation if derivation is not None else OptionDerivation()
    result = replace(
        base,
        expected_wait_w1=float(wait),
        expected_local_2=local_mean,
        decision_2=decision,
        local_model_missing=base.local_model_missing or missing,
    )
    return (float(x1pp), float(x2pp)), result


def fix_third_option(
    fast: ClusterModel,
    slow: ClusterModel,
    alpha: float,
    n_total: int,
    option1: OptionEntry,
    option2: OptionEntry,
    derivation: OptionDerivation,
    params: PayoffParameters,
    mode: CompositionMode = CompositionMode.LITERAL,
) -> Tuple[OptionEntry, OptionDerivation]:
    quorum = _check_quorum(fast, slow, alpha, n_total)
    x1 = option1.thresholds[0]
    x2p = option2.thresholds[1]

    def thresholds(p1, p2):
        x1pp, x2pp, _, _ = _third_thresholds(fast, slow, x1, x2p, p1, p2, params, mode)
        return x1pp, x2pp

    i, j, saturated = _grid_search(thresholds, (fast.size, slow.size), quorum, option2.t_s)
    p1, p2 = float(PERCENTILE_GRID[i]), float(PERCENTILE_GRID[j])
    (x1pp, x2pp), result = third_option_at(fast, slow, option1, option2, p1, p2, params, mode, derivation)
    if result.local_model_missing and not derivation.local_model_missing:
        logger.warning("Missing local-task model; option 3 assumes zero-length local work")
    if saturated:
        logger.warning("Option 3 quorum unreachable; percentiles saturated at %.3f", P_MAX)

    (bound1, bound2), _ = third_option_at(fast, slow, option1, option2, P_MAX, P_MAX, params, mode)
    if result.decision_2 is Decision.WAIT_FOR_SYNC:
        bound2 = option2.lateness_bounds[1]
    entry = OptionEntry(
        option=3,
        t_s=max(x1pp, x2pp),
        thresholds=(x1pp, x2pp),
        percentiles=(p1, p2),
        local_task_planned=(fast.model.local_late is not None, result.decision_2 is Decision.RUN_LOCAL_TASK),
        lateness_bounds=(
            max(bound1, option2.lateness_bounds[0]),
            max(bound2, option2.lateness_bounds[1]),
        ),
        participation=p1 * fast.size + p2 * slow.size,
        saturated=saturated,
    )
    return entry, result


# --------------------------------------------------------------------------- #
# Schedule                                                                    #
# --------------------------------------------------------------------------- #


def build_schedule(
    fast: ClusterModel,
    slow: ClusterModel,
    alpha: float,
    n_total: int,
    params: PayoffParameters,
    mode: CompositionMode = CompositionMode.LITERAL,
) -> SyncSchedule:
    mode = _mode(mode)
    fast.model.validate()
    slow.model.validate()

    option1 = fix_first_option(fast, slow, alpha, n_total)
    option2, derivation = fix_second_option(fast, slow, alpha, n_total, option1, params, mode)
    option3, derivation = fix_third_option(
        fast, slow, alpha, n_total, option1, option2, derivation, params, mode
    )
    if option2.t_s < option1.t_s - MONOTONE_TOLERANCE or option3.t_s < option2.t_s - MONOTONE_TOLERANCE:
        raise InternalConsistencyError(
            f"Sync times not monotone: {option1.t_s:.4f}, {option2.t_s:.4f}, {option3.t_s:.4f}"
        )
    schedule = SyncSchedule(
        options=(option1, option2, option3),
        alpha=alpha,
        n_total=n_total,
        mode=mode,
        derivation=derivation,
    )
    logger.debug(
        "Built %s schedule t_s=(%.3f, %.3f, %.3f) decisions=(%s, %s)",
        mode.value,
        *schedule.sync_times,
        derivation.decision_1.value,
        derivation.decision_2.value,
    )
    return schedule
