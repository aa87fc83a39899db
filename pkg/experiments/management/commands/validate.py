from django.core.management.base import BaseCommand

from ._shared import load_spec


class Command(BaseCommand):
    help = 'Check an experiment document and list the cells it expands to'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the experiment document')

    def handle(self, *args, **options):
        spec = load_spec(options['config'])
        synchronizers = ', '.join(synchronizer.label for synchronizer in spec.synchronizers)
        for cell in spec.cells():
            config = cell.config
            self.stdout.write(
                f"{cell.label}: n_workers={config.n_workers} alpha={config.alpha:g} "
                f"rounds={config.rounds} runs={config.runs} seed={config.seed}"
            )
        self.stdout.write(self.style.SUCCESS(f"OK: {len(spec.cells())} cell(s); synchronizers {synchronizers}"))
