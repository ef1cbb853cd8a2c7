from django.core.management.base import BaseCommand, CommandError

from simulation import plots
from simulation.logs import load_csv

from ._scenario import load_or_fail


class Command(BaseCommand):
    help = "Render a trajectory CSV as an SVG figure"

    def add_arguments(self, parser):
        parser.add_argument('csv', help="CSV written by run_scenario")
        parser.add_argument('--kind', required=True, choices=[kind for kind, _ in plots.PLOT_KINDS])
        parser.add_argument('--out', required=True, help="Output SVG path")
        parser.add_argument(
            '--scenario',
            help="Scenario the CSV came from; adds shapes, obstacles, the goal and input bounds",
        )

    def handle(self, *args, **options):
        cfg = load_or_fail(options['scenario']) if options['scenario'] else None
        try:
            log = load_csv(options['csv'])
        except OSError as e:
            raise CommandError(f"cannot read {options['csv']}: {e}")
        except ValueError as e:
            raise CommandError(f"{options['csv']}: {e}")

        if options['kind'] == plots.TRAJECTORY and cfg is None:
            self.stderr.write(self.style.WARNING("no --scenario given: plotting the robot path only"))
        try:
            plots.render(options['kind'], log, options['out'], cfg)
        except OSError as e:
            raise CommandError(f"cannot write {options['out']}: {e}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {options['kind']} plot to {options['out']}"))
