"""
Run an experiment document: every sweep cell under every synchronizer.

Usage:
    python manage.py run experiment.conf
    python manage.py run experiment.conf --workers 4 --output-dir results/n-sweep
    python manage.py run experiment.conf --background
"""
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from experiments.models import ExperimentRun
from experiments.runner import resolve_workers, run_spec
from experiments.tasks import dispatch_experiment_run
from simulator.engine import SimulationError

from ._shared import load_spec, load_traces, read_document


class Command(BaseCommand):
    help = 'Run an experiment document and write the result tables'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the experiment document')
        parser.add_argument('--output-dir', help='Directory for result files (overrides output_dir)')
        parser.add_argument('--workers', type=int, help='Process-pool size for sweep cells')
        parser.add_argument(
            '--background',
            action='store_true',
            help='Queue an ExperimentRun through django-q instead of running here',
        )

    def handle(self, *args, **options):
        spec = load_spec(options['config'])
        if options['output_dir']:
            spec = replace(spec, output_dir=options['output_dir'])

        if options['background']:
            run = ExperimentRun.objects.create(
                name=Path(options['config']).stem,
                config_text=read_document(options['config']),
                seed=settings.FASTSYNC_SEED,
                output_dir=options['output_dir'] or '',
            )
            mode = dispatch_experiment_run(run)
            run.refresh_from_db()
            self.stdout.write(f"Experiment run {run.id} {mode} ({run.status})")
            return

        traces = load_traces(spec.traces) if spec.traces else None
        workers = resolve_workers(spec, options['workers'])
        try:
            writer = run_spec(spec, traces=traces, workers=workers)
        except SimulationError as exc:
            raise CommandError(str(exc)) from exc
        try:
            written = writer.write()
        except OSError as exc:
            raise CommandError(f"Cannot write results to {spec.output_dir}: {exc}") from exc

        failed = sorted({row['status'] for row in writer.rows() if row['status'] != 'ok'})
        for path in written:
            self.stdout.write(str(path))
        message = f"{len(writer.results)} cell(s) x {len(spec.synchronizers)} synchronizer(s) written to {spec.output_dir}"
        if failed:
            self.stdout.write(self.style.WARNING(f"{message}; statuses: {', '.join(failed)}"))
        else:
            self.stdout.write(self.style.SUCCESS(message))
