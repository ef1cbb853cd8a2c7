"""
SVG figures of a logged run.

Figures are built with the object-oriented matplotlib API (no pyplot state)
and written as self-contained SVG: text is converted to paths, the date and
type metadata are dropped and element ids are salted with a fixed string, so
the same log always renders to the same file.
"""

import logging

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from control.dynamics import step_obstacle
from geometry.shapes import Pose2, body_to_world

logger = logging.getLogger(__name__)

TRAJECTORY = 'trajectory'
CBF = 'cbf'
CONTROLS = 'controls'

PLOT_KINDS = (
    (TRAJECTORY, 'Robot and obstacle trajectories'),
    (CBF, 'Per-obstacle minimum barrier value over time'),
    (CONTROLS, 'Control inputs over time'),
)

SVG_RC = {
    'svg.fonttype': 'path',
    'svg.hashsalt': 'barye',
}
SVG_METADATA = {'Date': None, 'Type': None, 'Creator': 'barye'}
SNAPSHOTS = 8


def _line_style(log):
    """A lone sample would draw an invisible line, so mark it instead."""
    return {'marker': 'o'} if len(log) == 1 else {}


def _snapshot_rows(count, snapshots=SNAPSHOTS):
    if count <= snapshots:
        return list(range(count))
    return sorted(set(np.linspace(0, count - 1, snapshots).round().astype(int).tolist()))


def obstacle_paths(cfg, count, dt):
    """World positions of every obstacle at each of ``count`` logged steps."""
    paths = []
    for obstacle in cfg.obstacles:
        state, positions = obstacle.state, []
        for _ in range(count):
            positions.append(state.position)
            state = step_obstacle(state, dt)
        paths.append(np.array(positions).reshape(-1, 2))
    return paths


def trajectory_figure(log, cfg=None):
    figure = Figure(figsize=(7, 6))
    ax = figure.add_subplot()
    ax.set_aspect('equal')
    ax.set_xlabel('x [m]')
    ax.set_ylabel('y [m]')
    style = _line_style(log)
    snapshots = _snapshot_rows(len(log))

    if cfg is not None:
        dt = float(log.t[1] - log.t[0]) if len(log) > 1 else cfg.sim.dt
        for obstacle, path in zip(cfg.obstacles, obstacle_paths(cfg, len(log), dt)):
            outline = obstacle.shape.outline()
            ax.plot(path[:, 0], path[:, 1], linestyle=':', color='tab:red', **style)
            for row in snapshots:
                ax.plot(*(outline + path[row]).T, color='tab:red', alpha=0.25 + 0.75 * row / max(len(log) - 1, 1))
        for row in snapshots:
            pose = Pose2(log.x[row], log.y[row], log.theta[row])
            for primitive in cfg.robot.shape.primitives:
                ax.plot(*body_to_world(pose, primitive.outline()).T, color='tab:gray', linewidth=0.8)
        goal = cfg.robot.goal
        ax.plot(goal.x, goal.y, marker='*', markersize=12, color='tab:green', linestyle='none', label='goal')

    ax.plot(log.x, log.y, color='tab:blue', label='robot', **style)
    ax.legend(loc='best')
    return figure


def cbf_figure(log):
    figure = Figure(figsize=(7, 4))
    ax = figure.add_subplot()
    style = _line_style(log)
    if log.min_h_per_obstacle:
        for obstacle_id, values in sorted(log.min_h_per_obstacle.items()):
            ax.plot(log.t, values, label=f"obstacle {obstacle_id}", **style)
        ax.legend(loc='best')
    ax.axhline(0.0, color='black', linestyle='--', linewidth=0.8)
    ax.set_xlabel('t [s]')
    ax.set_ylabel('min h [m]')
    return figure


def controls_figure(log, cfg=None):
    figure = Figure(figsize=(7, 4))
    ax = figure.add_subplot()
    style = _line_style(log)
    for axis, color in enumerate(('tab:blue', 'tab:orange')):
        ax.plot(log.t, log.u[:, axis], color=color, label=f"u{axis + 1}", **style)
        if cfg is not None:
            bounds = cfg.robot.bounds
            for limit in (bounds.u_min[axis], bounds.u_max[axis]):
                ax.axhline(limit, color=color, linestyle='--', linewidth=0.8)
    ax.set_xlabel('t [s]')
    ax.set_ylabel('u')
    ax.legend(loc='best')
    return figure


def build_figure(kind, log, cfg=None):
    if kind == TRAJECTORY:
        return trajectory_figure(log, cfg)
    if kind == CBF:
        return cbf_figure(log)
    if kind == CONTROLS:
        return controls_figure(log, cfg)
    raise ValueError(f"unknown plot kind {kind!r}")


def save_svg(figure, target):
    """Write ``figure`` as SVG to a path or binary stream."""
    with matplotlib.rc_context(SVG_RC):
        figure.savefig(target, format='svg', metadata=SVG_METADATA)
    logger.debug("Wrote SVG figure to %s", target)


def render(kind, log, target, cfg=None):
    save_svg(build_figure(kind, log, cfg), target)
