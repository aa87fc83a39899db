"""
Cluster-stability report over sliding windows of a trace file.

For each cluster count k the report gives the mean all-to-all and
consecutive adjusted Rand index across windows plus mean intra- and
inter-cluster distances.
"""
from dataclasses import asdict

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from clustering.services import ClusteringError, cluster_quality_report

from ._shared import load_traces

REPORT_COLUMNS = ['k', 'windows', 'ari_all_to_all', 'ari_consecutive', 'intra', 'inter']


class Command(BaseCommand):
    help = 'Report ARI and intra/inter-cluster distances for a trace CSV'

    def add_arguments(self, parser):
        parser.add_argument('traces', help='Trace CSV (worker_id,iteration,runtime_ms)')
        parser.add_argument('--window', type=int, default=10, help='Iterations per window')
        parser.add_argument('--overlap', type=int, default=5, help='Iterations shared by consecutive windows')
        parser.add_argument('--k', type=int, nargs='+', default=[2, 3, 4], help='Cluster counts to try')
        parser.add_argument('--output', help='Also write the table to this CSV')

    def handle(self, *args, **options):
        traces = load_traces(options['traces'])
        try:
            rows = cluster_quality_report(
                traces.worker_ids,
                traces.runtimes,
                options['window'],
                options['overlap'],
                options['k'],
            )
        except ClusteringError as exc:
            raise CommandError(str(exc)) from exc

        frame = pd.DataFrame([asdict(row) for row in rows], columns=REPORT_COLUMNS)
        self.stdout.write(frame.to_string(index=False))
        if options['output']:
            try:
                frame.to_csv(options['output'], index=False, lineterminator='\n')
            except OSError as exc:
                raise CommandError(f"Cannot write {options['output']}: {exc}") from exc
