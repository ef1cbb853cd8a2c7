"""
Validated scenario configuration, as produced by ``parse_scenario``.
"""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class RobotConfig:
    shape: object
    initial: object
    goal: object
    bounds: object

    @property
    def model(self):
        return self.initial.model


@dataclass(frozen=True)
class ObstacleConfig:
    shape: object
    state: object
    points: int = 24
    note: str = ''
    id: int = 0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    t_max: float = 20.0
    goal_tol: float = 0.1
    max_infeasible: int = 10
    record_timing: bool = True


@dataclass(frozen=True)
class OutputsConfig:
    csv: str = ''
    trajectory_svg: str = ''
    cbf_svg: str = ''
    controls_svg: str = ''


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    robot: RobotConfig
    controller: object
    obstacles: tuple = ()
    sim: SimConfig = field(default_factory=SimConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    description: str = ''
