"""
Simulator app services

Entry points used by the experiments app: seeded run contexts, one
iteration under a synchronizer, and whole experiments aggregated into a
MetricsReport. Every run draws its traces from ``[seed, run, 0]`` and its
protocol and network randomness from ``[seed, run, 1]``, so the same run
index sees the same workload under every synchronizer.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from scheduler.services import SyncSchedule
from simulator.config import ConfigError, SimulationConfig, SyncKind, SynchronizerSpec
from simulator.engine import Network
from simulator.fastsync import FastSyncController, FastSyncSynchronizer
from simulator.metrics import IterationMetrics, MetricsAccumulator, MetricsReport
from simulator.synchronizers import BSPSynchronizer, RunContext, StaleSynchronizer, Synchronizer
from simulator.traces import TraceSet, generate_traces

logger = logging.getLogger(__name__)

TRACE_STREAM = 0
PROTOCOL_STREAM = 1


def synthetic_traces(config: SimulationConfig, run_index: int = 0) -> TraceSet:
    """The generated workload run ``run_index`` sees: warmup window plus every round."""
    trace_rng = np.random.default_rng([config.seed, run_index, TRACE_STREAM])
    return generate_traces(config, trace_rng, config.clustering_window + config.rounds)


def build_context(config: SimulationConfig, run_index: int = 0, traces: Optional[TraceSet] = None) -> RunContext:
    config.validate()
    length = config.clustering_window + config.rounds
    if traces is None:
        traces = synthetic_traces(config, run_index)
    else:
        traces = traces.restricted(config.n_workers).cycled(length)
    rng = np.random.default_rng([config.seed, run_index, PROTOCOL_STREAM])
    low, high = config.local_task_range
    local_draws = rng.uniform(low, high, size=(config.n_workers, length, config.graph.local_count + 1))
    network = Network(config.ww_msg, config.wc_msg, config.partition)
    return RunContext(
        config=config,
        traces=traces,
        local_draws=local_draws,
        network=network,
        rng=rng,
        run_index=run_index,
    )


def make_synchronizer(spec: SynchronizerSpec, context: RunContext) -> Synchronizer:
    if spec.kind is SyncKind.FASTSYNC:
        return FastSyncSynchronizer(context, spec)
    if spec.kind is SyncKind.BSP:
        return BSPSynchronizer(context, spec)
    return StaleSynchronizer(context, spec)


def run_iteration(synchronizer: Synchronizer, iteration: int) -> IterationMetrics:
    return synchronizer.run_iteration(iteration)


def run_single(
    config: SimulationConfig,
    spec: SynchronizerSpec,
    run_index: int,
    traces: Optional[TraceSet] = None,
) -> List[IterationMetrics]:
    synchronizer = make_synchronizer(spec, build_context(config, run_index, traces))
    return [run_iteration(synchronizer, k) for k in range(config.rounds)]


def run_experiment(
    config: SimulationConfig,
    spec: SynchronizerSpec,
    traces: Optional[TraceSet] = None,
) -> MetricsReport:
    """Run ``config.runs`` seeded repetitions and aggregate their metrics."""
    config.validate()
    errors = spec.validation_errors()
    if errors:
        raise ConfigError(errors)
    accumulator = MetricsAccumulator()
    for run_index in range(config.runs):
        accumulator.add_run(run_index, run_single(config, spec, run_index, traces))
    report = accumulator.report(spec.label)
    logger.info(
        "%s: %d runs x %d rounds, runtime/sync point %.3f ms, participation %.3f",
        spec.label,
        config.runs,
        config.rounds,
        report.mean('runtime_per_sync_point_ms'),
        report.mean('participation'),
    )
    return report


def initial_schedule(
    config: SimulationConfig,
    traces: Optional[TraceSet] = None,
) -> Tuple[Optional[SyncSchedule], int]:
    """The schedule the first run starts with and the number of outlier workers."""
    controller = FastSyncController(build_context(config, 0, traces))
    if not controller.recluster(0):
        return None, 0
    return controller.schedule, len(controller.clusters.outliers)
