import json

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from simulation.loader import with_overrides
from simulation.runner import UnsafeInitialState, run_scenario

from ._scenario import load_or_fail


class Command(BaseCommand):
    help = "Time the controller (rows + QP) per step over repeated runs of a scenario"

    def add_arguments(self, parser):
        parser.add_argument('scenario', help="Scenario file, or the name of a bundled scenario")
        parser.add_argument('--reps', type=int, required=True, help="Number of repetitions (at least 1)")
        parser.add_argument('--json', action='store_true', help="Print a JSON report")

    def handle(self, *args, **options):
        reps = options['reps']
        if reps < 1:
            raise CommandError(f"--reps must be at least 1, got {reps}")
        cfg = with_overrides(load_or_fail(options['scenario']), record_timing=True)

        timings = []
        for _ in range(reps):
            try:
                log = run_scenario(cfg)
            except UnsafeInitialState as e:
                raise CommandError(str(e))
            except ImproperlyConfigured as e:
                raise CommandError(str(e))
            timings.append(log.solve_ms)

        # Runs are deterministic, so every repetition has the same step count
        samples = np.array(timings)
        report = {
            'scenario': cfg.name,
            'reps': reps,
            'steps': samples.shape[1],
            'reason': log.reason,
            'mean_ms': float(samples.mean()),
            'median_ms': float(np.median(samples)),
            'p95_ms': float(np.percentile(samples, 95)),
            'per_step_ms': samples.mean(axis=0).tolist(),
        }

        if options['json']:
            self.stdout.write(json.dumps(report, indent=2))
            return
        self.stdout.write(f"scenario: {report['scenario']}")
        self.stdout.write(f"reps: {reps}")
        self.stdout.write(f"steps: {report['steps']}")
        self.stdout.write(f"mean: {report['mean_ms']:.3f} ms")
        self.stdout.write(f"median: {report['median_ms']:.3f} ms")
        self.stdout.write(f"p95: {report['p95_ms']:.3f} ms")
