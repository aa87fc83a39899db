"""
Experiments app configuration documents

An experiment document is a flat list of ``key: value`` lines. Dotted keys
reach into nested settings (``wc_msg.mean``, ``partition.drop_probability``),
``synchronizer`` and ``sweep.value`` may repeat, and ``#`` starts a comment.
Keys that are absent keep the SimulationConfig defaults.

Problems are collected rather than raised one at a time: parse_config raises
a single ValidationError whose messages each name the key and the line.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

from django.core.exceptions import ValidationError

from game.services import GameError, PayoffParameters
from scheduler.services import CompositionMode
from simulator.config import (
    DEFAULT_SYNCHRONIZERS,
    ConfigError,
    SimulationConfig,
    SynchronizerSpec,
    TaskProfile,
)
from stats.services import Gaussian, StatsError

logger = logging.getLogger(__name__)

REPEATABLE_KEYS = ('synchronizer', 'sweep.value')
BASE_CELL = 'base'


# --------------------------------------------------------------------------- #
# Value parsers                                                               #
# --------------------------------------------------------------------------- #


def _integer(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got '{text}'") from None


def _number(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got '{text}'") from None
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got '{text}'")
    return value


def _non_negative(text: str) -> float:
    value = _number(text)
    if value < 0:
        raise ValueError(f"must be >= 0, got {value:g}")
    return value


def _boolean(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f"expected true or false, got '{text}'")


def _text(text: str) -> str:
    if not text:
        raise ValueError("must not be empty")
    return text


def _auto(parser: Callable[[str], object]) -> Callable[[str], object]:
    def parse(text: str):
        return None if text.lower() == 'auto' else parser(text)

    return parse


def _choice(enum_cls) -> Callable[[str], object]:
    def parse(text: str):
        try:
            return enum_cls(text.lower())
        except ValueError:
            allowed = ', '.join(member.value for member in enum_cls)
            raise ValueError(f"expected one of {allowed}, got '{text}'") from None

    return parse


def _frequency(text: str) -> Optional[int]:
    return None if text.lower() == 'fixed' else _integer(text)


def _synchronizer(text: str) -> SynchronizerSpec:
    try:
        return SynchronizerSpec.parse(text)
    except ConfigError as exc:
        raise ValueError(str(exc)) from None


CONFIG_KEYS: Dict[str, Callable[[str], object]] = {
    'n_workers': _integer,
    'alpha': _number,
    'rounds': _integer,
    'runs': _integer,
    'seed': _integer,
    'task_profile': _choice(TaskProfile),
    'heterogeneity_spread': _number,
    'slow_fraction': _number,
    'slow_factor': _number,
    'worker_exec_stddev': _number,
    'straggler_probability': _number,
    'straggler_slowdown': _number,
    'drift_rate': _number,
    'ww_msg.mean': _number,
    'ww_msg.stddev': _non_negative,
    'wc_msg.mean': _number,
    'wc_msg.stddev': _non_negative,
    'local_task_range.min': _number,
    'local_task_range.max': _number,
    'clustering_cost': _number,
    'clustering_frequency': _frequency,
    'clustering_window': _integer,
    'dbscan.eps': _auto(_number),
    'dbscan.min_pts': _auto(_integer),
    'partition.drop_probability': _number,
    'partition.isolation_probability': _number,
    'partition.isolation_duration': _number,
    'late_threshold': _integer,
    'mode': _choice(CompositionMode),
    'payoff.u1': _number,
    'payoff.u2': _number,
    'payoff.u3': _number,
    'payoff.f1': _number,
    'payoff.f2': _number,
    'payoff.f3': _number,
    'payoff.wait_rate': _number,
    'payoff.local_rate': _number,
    'payoff.pre_notify_wait_rate': _number,
}

SWEEPABLE_KEYS = tuple(
    key for key, parser in CONFIG_KEYS.items() if parser in (_integer, _number, _non_negative)
)


def _sweep_parameter(text: str) -> str:
    if text not in SWEEPABLE_KEYS:
        raise ValueError(f"'{text}' is not a numeric config key")
    return text


SPEC_KEYS: Dict[str, Callable[[str], object]] = {
    'synchronizer': _synchronizer,
    'sweep.parameter': _sweep_parameter,
    'sweep.value': _number,
    'output_dir': _text,
    'emit_plots': _boolean,
    'traces': _text,
    'workers': _integer,
}


# --------------------------------------------------------------------------- #
# Applying keys to a SimulationConfig                                         #
# --------------------------------------------------------------------------- #


def _payoff_with(payoff: PayoffParameters, name: str, value: float) -> PayoffParameters:
    if name[0] in 'uf' and name[1:].isdigit():
        attribute = 'sync_utils' if name[0] == 'u' else 'abort_costs'
        values = list(getattr(payoff, attribute))
        values[int(name[1:]) - 1] = value
        return replace(payoff, **{attribute: tuple(values)})
    return replace(payoff, **{name: value})


def apply_value(config: SimulationConfig, key: str, value) -> SimulationConfig:
    """Return ``config`` with one document key set. Raises GameError for bad payoff rates."""
    head, _, tail = key.partition('.')
    if head in ('ww_msg', 'wc_msg'):
        law = getattr(config, head)
        if tail == 'mean':
            law = Gaussian(value, law.variance)
        else:
            law = Gaussian(law.mean, value ** 2)
        return replace(config, **{head: law})
    if head == 'local_task_range':
        low, high = config.local_task_range
        return replace(config, local_task_range=(value, high) if tail == 'min' else (low, value))
    if head == 'dbscan':
        return replace(config, **{f'dbscan_{tail}': value})
    if head == 'partition':
        return replace(config, partition=replace(config.partition, **{tail: value}))
    if head == 'payoff':
        return replace(config, payoff=_payoff_with(config.payoff, tail, value))
    return replace(config, **{key: value})


def coerce_sweep_value(parameter: str, value: float):
    if CONFIG_KEYS[parameter] is _integer:
        if value != int(value):
            raise ValueError(f"{parameter} takes integers, got {value:g}")
        return int(value)
    if CONFIG_KEYS[parameter] is _non_negative and value < 0:
        raise ValueError(f"{parameter} must be >= 0, got {value:g}")
    return float(value)


# --------------------------------------------------------------------------- #
# Experiment spec                                                             #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: Tuple[float, ...]


@dataclass(frozen=True)
class ExperimentCell:
    index: int
    label: str
    config: SimulationConfig
    sweep_value: Optional[float] = None


@dataclass(frozen=True)
class ExperimentSpec:
    """A base config, the synchronizers to compare and an optional one-parameter sweep."""

    base: SimulationConfig = field(default_factory=SimulationConfig)
    synchronizers: Tuple[SynchronizerSpec, ...] = DEFAULT_SYNCHRONIZERS
    sweep: Optional[Sweep] = None
    output_dir: str = 'results'
    emit_plots: bool = False
    traces: Optional[str] = None
    workers: Optional[int] = None

    def cell_config(self, value: float) -> SimulationConfig:
        parameter = self.sweep.parameter
        return apply_value(self.base, parameter, coerce_sweep_value(parameter, value))

    def cells(self) -> List[ExperimentCell]:
        if self.sweep is None:
            return [ExperimentCell(0, BASE_CELL, self.base)]
        return [
            ExperimentCell(index, f"{self.sweep.parameter}={value:g}", self.cell_config(value), value)
            for index, value in enumerate(self.sweep.values)
        ]

    def with_seed(self, seed: int) -> 'ExperimentSpec':
        return replace(self, base=replace(self.base, seed=int(seed)))


# --------------------------------------------------------------------------- #
# Parsing                                                                     #
# --------------------------------------------------------------------------- #


def _read_lines(text: str) -> Tuple[List[Tuple[int, str, str]], List[str]]:
    entries = []
    errors = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        key, separator, raw = stripped.partition(':')
        if not separator:
            errors.append(f"line {number}: expected 'key: value', got '{stripped}'")
            continue
        entries.append((number, key.strip().lower(), raw.strip()))
    return entries, errors


def _located(error: str, lines: Dict[str, int]) -> str:
    token = error.split(' ', 1)[0].rstrip(':')
    for key, number in sorted(lines.items(), key=lambda item: item[1]):
        if key == token or key.startswith(token + '.'):
            return f"line {number}: {error}"
    return error


def parse_config(text: str) -> ExperimentSpec:
    """
    Parse an experiment document into a validated ExperimentSpec.

    Raises ValidationError listing every unknown key, type mismatch and
    invariant violation, each prefixed with the line it came from. Every
    sweep cell is validated as well as the base config.
    """
    entries, errors = _read_lines(text)
    lines: Dict[str, int] = {}
    config = SimulationConfig()
    synchronizers: List[SynchronizerSpec] = []
    sweep_values: List[float] = []
    options: Dict[str, object] = {}

    for number, key, raw in entries:
        parser = CONFIG_KEYS.get(key) or SPEC_KEYS.get(key)
        if parser is None:
            errors.append(f"line {number}: unknown key '{key}'")
            continue
        if key in lines and key not in REPEATABLE_KEYS:
            errors.append(f"line {number}: duplicate key '{key}', first set on line {lines[key]}")
            continue
        lines.setdefault(key, number)
        try:
            value = parser(raw)
        except ValueError as exc:
            errors.append(f"line {number}: {key}: {exc}")
            continue
        if key in CONFIG_KEYS:
            try:
                config = apply_value(config, key, value)
            except (GameError, StatsError) as exc:
                errors.append(f"line {number}: {key}: {exc}")
        elif key == 'synchronizer':
            if value in synchronizers:
                errors.append(f"line {number}: synchronizer '{value.label}' is listed twice")
            else:
                synchronizers.append(value)
        elif key == 'sweep.value':
            if value in sweep_values:
                errors.append(f"line {number}: sweep.value {value:g} is listed twice")
            else:
                sweep_values.append(value)
        else:
            options[key.replace('.', '_')] = value

    if not errors:
        errors.extend(_located(error, lines) for error in config.validation_errors())

    workers = options.get('workers')
    if workers is not None and workers < 1:
        errors.append(f"line {lines['workers']}: workers must be >= 1, got {workers}")

    sweep = None
    parameter = options.pop('sweep_parameter', None)
    if parameter is None and sweep_values:
        errors.append(f"line {lines['sweep.value']}: sweep.value needs a sweep.parameter")
    elif parameter is not None and not sweep_values:
        errors.append(f"line {lines['sweep.parameter']}: sweep.parameter needs at least one sweep.value")
    elif parameter is not None:
        sweep = Sweep(parameter, tuple(sweep_values))

    spec = ExperimentSpec(
        base=config,
        synchronizers=tuple(synchronizers) or DEFAULT_SYNCHRONIZERS,
        sweep=sweep,
        **options,
    )

    if not errors and sweep is not None:
        for value in sweep.values:
            prefix = f"line {lines['sweep.value']}: sweep {parameter}={value:g}"
            try:
                cell_errors = spec.cell_config(value).validation_errors()
            except (ValueError, GameError, StatsError) as exc:
                cell_errors = [str(exc)]
            errors.extend(f"{prefix}: {error}" for error in cell_errors)

    if errors:
        raise ValidationError(errors)
    logger.debug("Parsed experiment with %d cell(s) and %d synchronizer(s)", len(spec.cells()), len(spec.synchronizers))
    return spec


# --------------------------------------------------------------------------- #
# Serialization                                                               #
# --------------------------------------------------------------------------- #


def _stddev_text(law: Gaussian) -> str:
    std = law.std
    for candidate in (std, math.nextafter(std, math.inf), math.nextafter(std, 0.0)):
        if candidate * candidate == law.variance:
            return repr(candidate)
    return repr(std)


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_items(config: SimulationConfig) -> List[Tuple[str, str]]:
    payoff = config.payoff
    items = [
        ('n_workers', config.n_workers),
        ('alpha', config.alpha),
        ('rounds', config.rounds),
        ('runs', config.runs),
        ('seed', config.seed),
        ('task_profile', config.task_profile.value),
        ('heterogeneity_spread', config.heterogeneity_spread),
        ('slow_fraction', config.slow_fraction),
        ('slow_factor', config.slow_factor),
        ('worker_exec_stddev', config.worker_exec_stddev),
        ('straggler_probability', config.straggler_probability),
        ('straggler_slowdown', config.straggler_slowdown),
        ('drift_rate', config.drift_rate),
        ('ww_msg.mean', config.ww_msg.mean),
        ('ww_msg.stddev', _stddev_text(config.ww_msg)),
        ('wc_msg.mean', config.wc_msg.mean),
        ('wc_msg.stddev', _stddev_text(config.wc_msg)),
        ('local_task_range.min', config.local_task_range[0]),
        ('local_task_range.max', config.local_task_range[1]),
        ('clustering_cost', config.clustering_cost),
        ('clustering_frequency', 'fixed' if config.fixed_clustering else config.clustering_frequency),
        ('clustering_window', config.clustering_window),
        ('dbscan.eps', 'auto' if config.dbscan_eps is None else config.dbscan_eps),
        ('dbscan.min_pts', 'auto' if config.dbscan_min_pts is None else config.dbscan_min_pts),
        ('partition.drop_probability', config.partition.drop_probability),
        ('partition.isolation_probability', config.partition.isolation_probability),
        ('partition.isolation_duration', config.partition.isolation_duration),
        ('late_threshold', config.late_threshold),
        ('mode', config.mode.value),
    ]
    for index in range(3):
        items.append((f'payoff.u{index + 1}', payoff.sync_utils[index]))
    for index in range(3):
        items.append((f'payoff.f{index + 1}', payoff.abort_costs[index]))
    items.extend(
        [
            ('payoff.wait_rate', payoff.wait_rate),
            ('payoff.local_rate', payoff.local_rate),
            ('payoff.pre_notify_wait_rate', payoff.pre_notify_wait_rate),
        ]
    )
    return [(key, _format(value)) for key, value in items]


def serialize_spec(spec: ExperimentSpec) -> str:
    """Write ``spec`` as a document that parse_config reads back to an equal spec."""
    lines = [f"{key}: {value}" for key, value in _config_items(spec.base)]
    lines.extend(f"synchronizer: {synchronizer.label}" for synchronizer in spec.synchronizers)
    if spec.sweep is not None:
        lines.append(f"sweep.parameter: {spec.sweep.parameter}")
        lines.extend(f"sweep.value: {value!r}" for value in spec.sweep.values)
    lines.append(f"output_dir: {spec.output_dir}")
    lines.append(f"emit_plots: {_format(spec.emit_plots)}")
    if spec.traces is not None:
        lines.append(f"traces: {spec.traces}")
    if spec.workers is not None:
        lines.append(f"workers: {spec.workers}")
    return "\n".join(lines) + "\n"
