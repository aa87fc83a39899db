"""
Experiments app trace files

Trace CSVs hold one row per worker iteration under the header
``worker_id,iteration,runtime_ms``. Workers keep their order of first
appearance; iterations are sorted and must be the same for every worker.
"""
from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from simulator.traces import TraceError, TraceSet

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['worker_id', 'iteration', 'runtime_ms']

Source = Union[str, Path, io.TextIOBase]


def _read_frame(source: Source) -> pd.DataFrame:
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValidationError("Trace file is empty") from None
    except pd.errors.ParserError as exc:
        raise ValidationError(f"Trace file is not valid CSV: {exc}") from None
    return frame.fillna('')


def _parse_rows(frame: pd.DataFrame) -> pd.DataFrame:
    errors: List[str] = []
    iterations = pd.to_numeric(frame['iteration'], errors='coerce')
    runtimes = pd.to_numeric(frame['runtime_ms'], errors='coerce')
    for position in range(len(frame)):
        # header is row 1
        row = position + 2
        worker = frame['worker_id'].iat[position].strip()
        iteration = iterations.iat[position]
        runtime = runtimes.iat[position]
        if not worker:
            errors.append(f"row {row}: worker_id is empty")
        if pd.isna(iteration) or not np.isfinite(iteration) or iteration != int(iteration) or iteration < 0:
            raw = frame['iteration'].iat[position]
            errors.append(f"row {row}: iteration must be a non-negative integer, got '{raw}'")
        if pd.isna(runtime) or not np.isfinite(runtime):
            raw = frame['runtime_ms'].iat[position]
            errors.append(f"row {row}: runtime_ms must be a number, got '{raw}'")
        elif runtime < 0:
            errors.append(f"row {row}: runtime_ms must be >= 0, got {runtime:g}")
    if errors:
        raise ValidationError(errors)
    return pd.DataFrame(
        {
            'worker_id': frame['worker_id'].str.strip(),
            'iteration': iterations.astype(int),
            'runtime_ms': runtimes.astype(float),
        }
    )


def ingest_traces(source: Source) -> TraceSet:
    """Read a trace CSV into a workers x iterations TraceSet."""
    frame = _read_frame(source)
    if list(frame.columns) != TRACE_COLUMNS:
        raise ValidationError(
            f"Trace header must be {','.join(TRACE_COLUMNS)}, got {','.join(map(str, frame.columns))}"
        )
    if frame.empty:
        raise ValidationError("Trace file holds no rows")
    rows = _parse_rows(frame)

    duplicated = rows.duplicated(subset=['worker_id', 'iteration'], keep='first')
    if duplicated.any():
        position = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise ValidationError(
            f"row {position + 2}: duplicate iteration {rows['iteration'].iat[position]} "
            f"for worker {rows['worker_id'].iat[position]}"
        )

    workers = list(pd.unique(rows['worker_id']))
    table = rows.pivot(index='worker_id', columns='iteration', values='runtime_ms').reindex(workers)
    table = table.reindex(columns=sorted(table.columns))
    incomplete = table.index[table.isna().any(axis=1)].tolist()
    if incomplete:
        raise ValidationError(
            f"Workers {', '.join(incomplete)} do not cover every iteration; iteration counts must align"
        )
    try:
        traces = TraceSet(tuple(workers), table.to_numpy(dtype=float))
    except TraceError as exc:
        raise ValidationError(str(exc)) from None
    logger.info("Ingested traces for %d workers over %d iterations", traces.n_workers, traces.n_iterations)
    return traces


def traces_frame(traces: TraceSet) -> pd.DataFrame:
    workers, iterations = np.meshgrid(
        np.arange(traces.n_workers), np.arange(traces.n_iterations), indexing='ij'
    )
    return pd.DataFrame(
        {
            'worker_id': np.asarray(traces.worker_ids, dtype=object)[workers.ravel()],
            'iteration': iterations.ravel(),
            'runtime_ms': traces.runtimes.ravel(),
        },
        columns=TRACE_COLUMNS,
    )


def write_traces(traces: TraceSet, target: Source) -> None:
    traces_frame(traces).to_csv(target, index=False, lineterminator='\n')
