"""
Background tasks for the experiments app using Django-Q.
"""
import logging
import multiprocessing
import traceback
from dataclasses import replace
from pathlib import Path
from typing import List

from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import transaction
from django.utils import timezone
from django_q.tasks import async_task

from simulator.engine import SimulationError

from .config import parse_config
from .models import ExperimentRun
from .reports import ReportError
from .runner import resolve_workers, run_spec
from .traces import ingest_traces

logger = logging.getLogger(__name__)


def _format_debug_entries(entries: List[str]) -> str:
    return "\n".join(entries)


def _validation_text(exc: ValidationError) -> str:
    return "; ".join(exc.messages)


def default_output_dir(run: ExperimentRun) -> str:
    return str(Path(settings.FASTSYNC_OUTPUT_ROOT) / f"run-{run.pk}")


def process_experiment_run(run_id: int) -> None:
    """
    Background task that executes an ExperimentRun.

    Safe to re-run while the run is pending; runs that are already
    processing or completed are left alone. Can be called directly or
    queued via Django-Q's async_task().
    """
    debug_entries: List[str] = []

    def log_debug(message: str) -> None:
        timestamp = timezone.now().isoformat()
        debug_entries.append(f"[{timestamp}] {message}")
        logger.info("Experiment run %s: %s", run_id, message)

    try:
        with transaction.atomic():
            run = ExperimentRun.objects.select_for_update().get(id=run_id)

            if run.status == ExperimentRun.Status.PROCESSING:
                log_debug("Run already processing; skipping duplicate task.")
                return

            if run.status == ExperimentRun.Status.COMPLETED:
                log_debug("Run already completed; no action required.")
                return

            run.status = ExperimentRun.Status.PROCESSING
            run.error_message = ""
            run.completed_at = None
            run.save(update_fields=["status", "error_message", "completed_at", "updated_at"])

        spec = parse_config(run.config_text)
        seed = run.seed if run.seed is not None else settings.FASTSYNC_SEED
        if seed is not None:
            spec = spec.with_seed(seed)
            log_debug(f"Using seed {seed}.")

        output_dir = run.output_dir or default_output_dir(run)
        spec = replace(spec, output_dir=output_dir)
        traces = None
        if spec.traces:
            traces = ingest_traces(spec.traces)
            log_debug(f"Loaded traces for {traces.n_workers} workers from {spec.traces}.")

        cells = spec.cells()
        workers = resolve_workers(spec)
        if multiprocessing.current_process().daemon:
            # django-q workers are daemonic and cannot start a pool
            workers = 1
        log_debug(
            f"Running {len(cells)} cell(s) x {len(spec.synchronizers)} synchronizer(s) "
            f"on {workers} worker process(es)."
        )

        writer = run_spec(spec, traces=traces, workers=workers)
        written = writer.write()
        log_debug(f"Wrote {len(written)} file(s) to {output_dir}.")

        run.output_dir = output_dir
        run.cell_count = len(cells)
        run.result_rows = writer.json_rows()
        run.written_files = [str(path) for path in written]
        run.status = ExperimentRun.Status.COMPLETED
        run.completed_at = timezone.now()
        run.debug_log = _format_debug_entries(debug_entries)
        run.save(
            update_fields=[
                "output_dir",
                "cell_count",
                "result_rows",
                "written_files",
                "status",
                "completed_at",
                "debug_log",
                "updated_at",
            ]
        )

    except (ValidationError, SimulationError, ReportError) as exc:
        message = _validation_text(exc) if isinstance(exc, ValidationError) else str(exc)
        log_debug(f"Experiment error: {message}")
        with transaction.atomic():
            try:
                run = ExperimentRun.objects.select_for_update().get(id=run_id)
                run.status = ExperimentRun.Status.FAILED
                run.error_message = message
                run.debug_log = _format_debug_entries(debug_entries)
                run.save(update_fields=["status", "error_message", "debug_log", "updated_at"])
            except ExperimentRun.DoesNotExist:
                log_debug("Experiment run disappeared during failure handling.")
        return
    except ExperimentRun.DoesNotExist:
        log_debug("Experiment run not found; aborting task.")
        return
    except Exception as exc:  # noqa: BLE001
        traceback_str = traceback.format_exc()
        log_debug(f"Unexpected error: {exc}")

        with transaction.atomic():
            try:
                run = ExperimentRun.objects.select_for_update().get(id=run_id)
                run.status = ExperimentRun.Status.FAILED
                run.error_message = f"Unexpected error: {exc}"
                run.debug_log = _format_debug_entries(debug_entries + [traceback_str])
                run.save(update_fields=["status", "error_message", "debug_log", "updated_at"])
            except ExperimentRun.DoesNotExist:
                log_debug("Run missing during failure handling.")

        # Re-raise to let Django-Q know the task failed
        raise


def dispatch_experiment_run(run: ExperimentRun, allow_inline: bool = True) -> str:
    """
    Enqueue the run through Django-Q, falling back to inline execution.

    Returns "queued" or "inline".
    """
    try:
        task_id = async_task('experiments.tasks.process_experiment_run', run.id)
        logger.info("Queued experiment run %s via Django-Q (task_id: %s)", run.id, task_id)
        return "queued"
    except Exception as exc:  # noqa: BLE001
        logger.warning(
            "Queue unavailable for experiment run %s. Falling back to inline execution. %s",
            run.id,
            exc,
        )
        if not allow_inline:
            ExperimentRun.objects.filter(id=run.id).update(
                status=ExperimentRun.Status.FAILED,
                error_message=f"Experiment run could not be queued: {exc}",
            )
            raise
        process_experiment_run(run.id)
        return "inline"
