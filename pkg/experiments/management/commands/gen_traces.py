"""
Write the synthetic workload of an experiment document as a trace CSV.

The file holds exactly the traces run 0 of the base config generates, so
feeding it back through the ``traces`` key reproduces that run.
"""
from django.core.management.base import BaseCommand, CommandError

from experiments.traces import write_traces
from simulator.services import synthetic_traces

from ._shared import load_spec


class Command(BaseCommand):
    help = 'Generate a trace CSV (worker_id,iteration,runtime_ms) from an experiment document'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the experiment document')
        parser.add_argument('output', help='Trace CSV to write')
        parser.add_argument('--run', type=int, default=0, help='Run index whose workload to write')

    def handle(self, *args, **options):
        spec = load_spec(options['config'])
        traces = synthetic_traces(spec.base, options['run'])
        try:
            write_traces(traces, options['output'])
        except OSError as exc:
            raise CommandError(f"Cannot write {options['output']}: {exc}") from exc
        self.stdout.write(
            self.style.SUCCESS(
                f"Wrote {traces.n_workers} workers x {traces.n_iterations} iterations to {options['output']}"
            )
        )
