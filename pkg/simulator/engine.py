"""
Simulator app event engine

A heap of ``(time, sequence, payload)`` entries. Equal timestamps pop in
insertion order so every run replays identically for a given seed.
"""
from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from stats.services import Gaussian, sample

logger = logging.getLogger(__name__)


class SimulationError(Exception):
    """Base error for simulation failures."""


class EndOfSimulation(SimulationError):
    """Raised by ``advance`` once the event queue is empty."""


class CausalityError(SimulationError):
    """Raised when an event is scheduled before the current clock."""


class Engine:
    def __init__(self, start: float = 0.0) -> None:
        self._queue: List[Tuple[float, int, Any]] = []
        self._sequence = itertools.count()
        self.now = float(start)
        self.processed = 0

    def __len__(self) -> int:
        return len(self._queue)

    def schedule(self, time: float, payload: Any) -> None:
        if time < self.now:
            raise CausalityError(f"Event at {time:.6f} is earlier than the clock {self.now:.6f}")
        heapq.heappush(self._queue, (float(time), next(self._sequence), payload))

    def advance(self) -> Tuple[float, Any]:
        if not self._queue:
            raise EndOfSimulation("No events left")
        time, _, payload = heapq.heappop(self._queue)
        self.now = time
        self.processed += 1
        return time, payload


def advance(engine: Engine) -> Tuple[float, Any]:
    return engine.advance()


# --------------------------------------------------------------------------- #
# Network                                                                     #
# --------------------------------------------------------------------------- #


class Edge(str, Enum):
    WORKER_WORKER = 'ww'
    WORKER_CONTROLLER = 'wc'


class _Dropped:
    def __repr__(self) -> str:
        return 'Dropped'


Dropped = _Dropped()
Delivery = Union[float, _Dropped]


@dataclass(frozen=True)
class PartitionModel:
    """Independent message loss plus per-iteration isolation episodes."""

    drop_probability: float = 0.0
    isolation_probability: float = 0.0
    isolation_duration: float = 0.0

    def validation_errors(self) -> List[str]:
        errors = []
        for name in ('drop_probability', 'isolation_probability'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"partition.{name} must be in [0, 1], got {value}")
        if self.isolation_duration < 0:
            errors.append(f"partition.isolation_duration must be >= 0, got {self.isolation_duration}")
        return errors


@dataclass
class Network:
    """
    Message-cost model. Worker-worker traffic is lossy; worker-controller
    traffic is reliable but held back while the worker is isolated.
    """

    ww_msg: Gaussian
    wc_msg: Gaussian
    partition: PartitionModel = PartitionModel()
    isolated_until: Dict[str, float] = field(default_factory=dict)

    def is_isolated(self, worker_id: str, now: float) -> bool:
        return now < self.isolated_until.get(worker_id, float('-inf'))

    def start_episodes(self, worker_ids, now: float, rng: np.random.Generator) -> List[str]:
        """Roll one isolation episode per worker starting at ``now``."""
        self.isolated_until = {}
        if self.partition.isolation_probability <= 0 or self.partition.isolation_duration <= 0:
            return []
        draws = rng.random(len(worker_ids))
        isolated = [w for w, draw in zip(worker_ids, draws) if draw < self.partition.isolation_probability]
        for worker_id in isolated:
            self.isolated_until[worker_id] = now + self.partition.isolation_duration
        return isolated

    def delay(self, edge: Edge, rng: np.random.Generator) -> float:
        return sample(self.ww_msg if edge is Edge.WORKER_WORKER else self.wc_msg, rng)

    def deliver(
        self,
        sender: Optional[str],
        receiver: Optional[str],
        now: float,
        rng: np.random.Generator,
        edge: Edge = Edge.WORKER_WORKER,
    ) -> Delivery:
        if edge is Edge.WORKER_CONTROLLER:
            worker = sender if sender is not None else receiver
            start = max(now, self.isolated_until.get(worker, now)) if worker is not None else now
            return start + self.delay(edge, rng)
        if any(w is not None and self.is_isolated(w, now) for w in (sender, receiver)):
            return Dropped
        if self.partition.drop_probability > 0 and rng.random() < self.partition.drop_probability:
            return Dropped
        arrival = now + self.delay(edge, rng)
        if receiver is not None and self.is_isolated(receiver, arrival):
            return Dropped
        return arrival


def deliver(
    network: Network,
    sender: Optional[str],
    receiver: Optional[str],
    now: float,
    rng: np.random.Generator,
    edge: Edge = Edge.WORKER_WORKER,
) -> Delivery:
    return network.deliver(sender, receiver, now, rng, edge)
