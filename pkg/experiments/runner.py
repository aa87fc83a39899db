"""
Experiments app runner

Sweep cells are independent, so they run in a process pool. Results come
back to the parent process, which owns the ReportWriter and is the only
place files get written.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Optional, Sequence

from django.conf import settings

from experiments.config import ExperimentCell, ExperimentSpec
from experiments.reports import CellResult, ReportWriter
from simulator.config import SyncKind, SynchronizerSpec
from simulator.engine import SimulationError
from simulator.metrics import METRICS, MetricSummary, MetricsReport
from simulator.services import initial_schedule, run_experiment
from simulator.traces import TraceSet

logger = logging.getLogger(__name__)

ERROR_STATUS = 'error'


def failed_report(synchronizer: str, status: str = ERROR_STATUS) -> MetricsReport:
    """A report with every metric missing, so the cell still shows up in the tables."""
    missing = float('nan')
    return MetricsReport(
        synchronizer=synchronizer,
        summaries={metric: MetricSummary(missing, missing, 0) for metric in METRICS},
        status=status,
    )


def run_cell(
    cell: ExperimentCell,
    synchronizers: Sequence[SynchronizerSpec],
    traces: Optional[TraceSet] = None,
) -> CellResult:
    reports = []
    for synchronizer in synchronizers:
        try:
            reports.append(run_experiment(cell.config, synchronizer, traces))
        except SimulationError as exc:
            logger.error("Cell %s under %s failed: %s", cell.label, synchronizer.label, exc)
            reports.append(failed_report(synchronizer.label))

    schedule, outliers = None, 0
    if any(synchronizer.kind is SyncKind.FASTSYNC for synchronizer in synchronizers):
        try:
            schedule, outliers = initial_schedule(cell.config, traces)
        except SimulationError as exc:
            logger.warning("Cell %s has no initial schedule: %s", cell.label, exc)
    return CellResult(
        index=cell.index,
        label=cell.label,
        reports=tuple(reports),
        sweep_value=cell.sweep_value,
        schedule=schedule,
        outliers=outliers,
    )


def resolve_workers(spec: ExperimentSpec, override: Optional[int] = None) -> int:
    if override is not None:
        return max(1, int(override))
    if spec.workers is not None:
        return spec.workers
    return max(1, int(getattr(settings, 'FASTSYNC_POOL_WORKERS', 1)))


def run_spec(
    spec: ExperimentSpec,
    traces: Optional[TraceSet] = None,
    workers: int = 1,
    writer: Optional[ReportWriter] = None,
) -> ReportWriter:
    """Run every cell of ``spec`` and collect the results in ``writer`` (not yet written)."""
    if writer is None:
        writer = ReportWriter(
            output_dir=spec.output_dir,
            sweep_parameter=spec.sweep.parameter if spec.sweep else None,
            emit_plots=spec.emit_plots,
        )
    cells = spec.cells()
    workers = max(1, min(int(workers), len(cells)))
    logger.info(
        "Running %d cell(s) x %d synchronizer(s) with %d worker process(es)",
        len(cells),
        len(spec.synchronizers),
        workers,
    )

    if workers == 1:
        for cell in cells:
            writer.add(run_cell(cell, spec.synchronizers, traces))
        return writer

    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(run_cell, cell, spec.synchronizers, traces): cell for cell in cells}
        for future in as_completed(futures):
            writer.add(future.result())
    return writer
