from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from control.safety import Obstacle
from control.stability import clf_rows
from simulation.runner import initial_clearance

from ._scenario import load_or_fail


class Command(BaseCommand):
    help = "Validate a scenario and report its size and initial safety margin"

    def add_arguments(self, parser):
        parser.add_argument('scenario', help="Scenario file, or the name of a bundled scenario")

    def handle(self, *args, **options):
        cfg = load_or_fail(options['scenario'])
        robot, params = cfg.robot, cfg.controller
        obstacles = [Obstacle.from_shape(o.id, o.shape, o.state, o.points) for o in cfg.obstacles]
        try:
            field = params.build_field(robot.shape)
        except ValueError as e:
            raise CommandError(f"invalid controller: {e}")
        except ImproperlyConfigured as e:
            raise CommandError(str(e))
        min_h, per_obstacle = initial_clearance(field, robot.initial, obstacles)
        clf_count = len(clf_rows(robot.initial, robot.goal, params.gammas))
        cbf_count = sum(len(obstacle.local_points) for obstacle in obstacles)

        self.stdout.write(f"scenario: {cfg.name}")
        self.stdout.write(f"model: {robot.model}")
        self.stdout.write(f"shape: {len(robot.shape.primitives)} primitives")
        self.stdout.write(f"obstacles: {len(obstacles)}")
        self.stdout.write(f"rows: {clf_count} clf + {cbf_count} cbf")
        self.stdout.write(f"initial_min_h: {min_h:.6g} m")
        for obstacle, value in zip(obstacles, per_obstacle):
            self.stdout.write(f"  obstacle {obstacle.id}: {value:.6g} m")

        if min_h <= 0.0:
            raise CommandError(f"initial state unsafe: min h = {min_h:.6g} m")
        self.stdout.write(self.style.SUCCESS(f"{cfg.name}: OK"))
