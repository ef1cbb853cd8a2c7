"""
Trajectory logs as CSV.

Numbers are written with 17 significant digits so that reading a file back
reproduces every value. After the fixed columns comes one ``min_h_<id>``
column per obstacle.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from control.qp import STATUS_CHOICES

COLUMNS = (
    't', 'x', 'y', 'theta', 'u1', 'u2', 'delta_d', 'delta_theta', 'min_h', 'qp_status', 'solve_ms',
)
OBSTACLE_COLUMN = 'min_h_'
STATUSES = frozenset(status for status, _ in STATUS_CHOICES)


def format_number(value):
    return format(float(value), '.17g')


def header(obstacle_ids):
    return list(COLUMNS) + [f"{OBSTACLE_COLUMN}{i}" for i in obstacle_ids]


def record_row(record):
    state = record.state
    numbers = (
        record.t, state.x, state.y, state.wrapped_theta,
        record.u[0], record.u[1], record.delta[0], record.delta[1], record.min_h,
    )
    return (
        [format_number(value) for value in numbers]
        + [record.qp_status, format_number(record.solve_ms)]
        + [format_number(value) for value in record.min_h_per_obstacle]
    )


def write_csv(log, stream):
    """Write ``log`` (a ``TrajectoryLog``) to an open text stream."""
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(header(log.obstacle_ids))
    for record in log.records:
        writer.writerow(record_row(record))


def save_csv(log, path):
    with open(path, 'w', newline='', encoding='utf-8') as stream:
        write_csv(log, stream)


@dataclass(eq=False)
class CsvLog:
    """Column view of a trajectory CSV."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    min_h: np.ndarray
    qp_status: list
    solve_ms: np.ndarray
    min_h_per_obstacle: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


def _parse_row(number, row, names):
    if len(row) != len(names):
        raise ValueError(f"row {number}: expected {len(names)} fields, got {len(row)}")
    values = {}
    for name, text in zip(names, row):
        if name == 'qp_status':
            if text not in STATUSES:
                raise ValueError(f"row {number}, column qp_status: unknown status {text!r}")
            values[name] = text
            continue
        try:
            values[name] = float(text)
        except ValueError:
            raise ValueError(f"row {number}, column {name}: not a number: {text!r}") from None
    return values


def read_csv(stream):
    """Read a trajectory CSV from an open text stream into a ``CsvLog``.

    Raises ``ValueError`` naming the offending row (the header is row 1).
    """
    reader = csv.reader(stream)
    names = next(reader, None)
    if names is None:
        raise ValueError("row 1: empty file, expected a header")
    if tuple(names[:len(COLUMNS)]) != COLUMNS or not all(
        name.startswith(OBSTACLE_COLUMN) and name[len(OBSTACLE_COLUMN):].isdigit()
        for name in names[len(COLUMNS):]
    ):
        raise ValueError(f"row 1: unexpected header {','.join(names)!r}")

    rows = [_parse_row(number, row, names) for number, row in enumerate(reader, start=2)]

    def column(name):
        return np.array([row[name] for row in rows], dtype=float)

    obstacle_names = names[len(COLUMNS):]
    return CsvLog(
        t=column('t'),
        x=column('x'),
        y=column('y'),
        theta=column('theta'),
        u=np.column_stack([column('u1'), column('u2')]) if rows else np.zeros((0, 2)),
        delta=np.column_stack([column('delta_d'), column('delta_theta')]) if rows else np.zeros((0, 2)),
        min_h=column('min_h'),
        qp_status=[row['qp_status'] for row in rows],
        solve_ms=column('solve_ms'),
        min_h_per_obstacle={int(name[len(OBSTACLE_COLUMN):]): column(name) for name in obstacle_names},
    )


def load_csv(path):
    with open(path, newline='', encoding='utf-8') as stream:
        return read_csv(stream)
