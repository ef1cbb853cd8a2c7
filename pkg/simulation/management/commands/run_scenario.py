from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from geometry.fields import SDF_MODE_CHOICES
from simulation import plots
from simulation.loader import with_overrides
from simulation.logs import load_csv, save_csv
from simulation.runner import GOAL_REACHED, REASON_CHOICES, UnsafeInitialState, run_scenario

from ._scenario import load_or_fail


class Command(BaseCommand):
    help = "Run a scenario, write its trajectory CSV and print a summary"

    def add_arguments(self, parser):
        parser.add_argument('scenario', help="Scenario file, or the name of a bundled scenario")
        parser.add_argument('--dt', type=float, help="Control period in seconds")
        parser.add_argument('--tmax', type=float, help="Maximum simulated time in seconds")
        parser.add_argument('--sdf-mode', choices=[mode for mode, _ in SDF_MODE_CHOICES])
        parser.add_argument('--alpha', type=float, help="CBF rate")
        parser.add_argument('--csv', help="Output CSV path (default: outputs.csv, else <name>.csv)")
        parser.add_argument(
            '--no-timing', action='store_true',
            help="Write solve_ms as 0 so that repeated runs give identical files",
        )

    def handle(self, *args, **options):
        cfg = load_or_fail(options['scenario'])
        try:
            cfg = with_overrides(
                cfg,
                dt=options['dt'],
                t_max=options['tmax'],
                sdf_mode=options['sdf_mode'],
                alpha=options['alpha'],
                record_timing=False if options['no_timing'] else None,
            )
            log = run_scenario(cfg)
        except UnsafeInitialState as e:
            raise CommandError(str(e))
        except ValueError as e:
            raise CommandError(f"invalid parameters: {e}")
        except ImproperlyConfigured as e:
            raise CommandError(str(e))

        csv_path = options['csv'] or cfg.outputs.csv or f"{cfg.name or 'scenario'}.csv"
        try:
            save_csv(log, csv_path)
            figures = [
                (kind, path) for kind, path in (
                    (plots.TRAJECTORY, cfg.outputs.trajectory_svg),
                    (plots.CBF, cfg.outputs.cbf_svg),
                    (plots.CONTROLS, cfg.outputs.controls_svg),
                ) if path
            ]
            if figures:
                written = load_csv(csv_path)
                for kind, path in figures:
                    plots.render(kind, written, path, cfg)
        except OSError as e:
            raise CommandError(f"cannot write outputs: {e}")

        summary = log.summary()
        self.stdout.write(f"reason: {summary['reason']}")
        self.stdout.write(f"steps: {summary['steps']}")
        self.stdout.write(f"min_h: {summary['min_h']:.6g} m")
        self.stdout.write(f"mean_solve_ms: {summary['mean_solve_ms']:.3f}")
        self.stdout.write(f"infeasible_steps: {summary['infeasible_steps']}")
        self.stdout.write(f"csv: {csv_path}")

        if log.reason != GOAL_REACHED:
            label = dict(REASON_CHOICES)[log.reason]
            raise CommandError(f"{cfg.name}: run ended with {log.reason} ({label.lower()})", returncode=1)
        self.stdout.write(self.style.SUCCESS(f"{cfg.name}: goal reached"))
