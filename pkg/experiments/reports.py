"""
Experiments app reports

Every cell x synchronizer x metric becomes one row of ``results.csv``.
Summary tables pivot those rows on the cell (the sweep axis) with one column
per synchronizer, and ``schedules.csv`` records the initial FastSync schedule
of each cell. Cells may finish in any order; files are written once, in cell
order, so re-running an experiment with the same seed reproduces them byte
for byte.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from scheduler.services import SyncSchedule  # noqa: E402
from simulator.metrics import MetricsReport  # noqa: E402

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['cell', 'synchronizer', 'metric', 'mean', 'stddev', 'n', 'status']
SCHEDULE_COLUMNS = [
    'cell',
    'outliers',
    'option',
    't_s',
    'threshold_fast',
    'threshold_slow',
    'percentile_fast',
    'percentile_slow',
    'local_fast',
    'local_slow',
    'bound_fast',
    'bound_slow',
    'saturated',
]
RESULTS_FILE = 'results.csv'
SCHEDULES_FILE = 'schedules.csv'
SVG_SALT = 'fastsync'


class ReportError(Exception):
    """Raised when cell results cannot be assembled into a report."""


@dataclass(frozen=True)
class SummaryTable:
    name: str
    metrics: Tuple[str, ...]
    ylabel: str


SUMMARY_TABLES = (
    SummaryTable('summary_runtime', ('runtime_per_sync_point_ms',), 'runtime / sync point (ms)'),
    SummaryTable('summary_participation', ('participation',), 'participation'),
    SummaryTable(
        'summary_outcomes',
        ('success_option_1', 'success_option_2', 'success_option_3', 'failures'),
        'share of iterations',
    ),
    SummaryTable(
        'summary_communication',
        ('communication_ms', 'communication_with_reports_ms', 'decision_messages'),
        'overhead',
    ),
)


@dataclass(frozen=True)
class CellResult:
    """What one sweep cell produced: a report per synchronizer and the initial schedule."""

    index: int
    label: str
    reports: Tuple[MetricsReport, ...]
    sweep_value: Optional[float] = None
    schedule: Optional[SyncSchedule] = None
    outliers: int = 0

    def rows(self) -> List[Dict[str, object]]:
        rows = []
        for report in self.reports:
            rows.extend(report.to_rows(self.label))
        return rows


@dataclass
class ReportWriter:
    output_dir: Path
    sweep_parameter: Optional[str] = None
    emit_plots: bool = False
    results: Dict[int, CellResult] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.output_dir = Path(self.output_dir)

    def add(self, result: CellResult) -> None:
        if result.index in self.results:
            raise ReportError(f"Cell {result.index} ({result.label}) was reported twice")
        self.results[result.index] = result
        logger.info("Cell %s finished with %d synchronizer(s)", result.label, len(result.reports))

    @property
    def ordered(self) -> List[CellResult]:
        return [self.results[index] for index in sorted(self.results)]

    def rows(self) -> List[Dict[str, object]]:
        rows = []
        for result in self.ordered:
            rows.extend(result.rows())
        return rows

    def json_rows(self) -> List[Dict[str, object]]:
        return [
            {key: None if isinstance(value, float) and math.isnan(value) else value for key, value in row.items()}
            for row in self.rows()
        ]

    # ------------------------------------------------------------------ #
    # Frames                                                             #
    # ------------------------------------------------------------------ #

    def results_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=RESULT_COLUMNS)

    def _cell_labels(self) -> List[str]:
        return [result.label for result in self.ordered]

    def _synchronizers(self) -> List[str]:
        seen: List[str] = []
        for result in self.ordered:
            for report in result.reports:
                if report.synchronizer not in seen:
                    seen.append(report.synchronizer)
        return seen

    def summary_frame(self, table: SummaryTable) -> pd.DataFrame:
        frame = self.results_frame()
        frame = frame[frame['metric'].isin(table.metrics)]
        cells = self._cell_labels()
        columns = self._synchronizers()
        if len(table.metrics) == 1:
            pivot = frame.pivot(index='cell', columns='synchronizer', values='mean')
            pivot = pivot.reindex(index=cells, columns=columns)
        else:
            pivot = frame.pivot(index=['cell', 'metric'], columns='synchronizer', values='mean')
            order = pd.MultiIndex.from_product([cells, list(table.metrics)], names=['cell', 'metric'])
            pivot = pivot.reindex(index=order, columns=columns)
        pivot.columns.name = None
        return pivot

    def schedules_frame(self) -> pd.DataFrame:
        rows = []
        for result in self.ordered:
            if result.schedule is None:
                continue
            for row in result.schedule.to_rows():
                rows.append({'cell': result.label, 'outliers': result.outliers, **row})
        return pd.DataFrame(rows, columns=SCHEDULE_COLUMNS)

    # ------------------------------------------------------------------ #
    # Files                                                              #
    # ------------------------------------------------------------------ #

    def _plot(self, table: SummaryTable, summary: pd.DataFrame, path: Path) -> None:
        cells = self._cell_labels()
        values = [self.results[index].sweep_value for index in sorted(self.results)]
        numeric = all(value is not None for value in values)
        xs = values if numeric else list(range(len(cells)))
        with plt.rc_context({'svg.hashsalt': SVG_SALT}):
            fig, axes = plt.subplots(1, len(table.metrics), figsize=(5 * len(table.metrics), 4), squeeze=False)
            for axis, metric in zip(axes[0], table.metrics):
                data = summary if len(table.metrics) == 1 else summary.xs(metric, level='metric')
                for synchronizer in data.columns:
                    axis.plot(xs, data[synchronizer].to_numpy(), marker='o', label=synchronizer)
                axis.set_title(metric)
                axis.set_xlabel(self.sweep_parameter or 'cell')
                axis.set_ylabel(table.ylabel)
                if not numeric:
                    axis.set_xticks(xs)
                    axis.set_xticklabels(cells)
                axis.grid(alpha=0.3)
            axes[0][0].legend()
            fig.tight_layout()
            fig.savefig(path, format='svg', metadata={'Date': None})
            plt.close(fig)

    def write(self) -> List[Path]:
        """Write the results, summary and schedule CSVs (and plots) and return their paths."""
        if not self.results:
            raise ReportError("No cell results to write")
        self.output_dir.mkdir(parents=True, exist_ok=True)
        written = []

        path = self.output_dir / RESULTS_FILE
        self.results_frame().to_csv(path, index=False, lineterminator='\n')
        written.append(path)

        for table in SUMMARY_TABLES:
            summary = self.summary_frame(table)
            path = self.output_dir / f'{table.name}.csv'
            summary.to_csv(path, lineterminator='\n')
            written.append(path)
            if self.emit_plots:
                plot_path = self.output_dir / f'{table.name}.svg'
                self._plot(table, summary, plot_path)
                written.append(plot_path)

        schedules = self.schedules_frame()
        if not schedules.empty:
            path = self.output_dir / SCHEDULES_FILE
            schedules.to_csv(path, index=False, lineterminator='\n')
            written.append(path)

        logger.info("Wrote %d report file(s) to %s", len(written), self.output_dir)
        return written
