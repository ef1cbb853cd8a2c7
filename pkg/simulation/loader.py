"""
Scenario documents: JSON text in, validated ``ScenarioConfig`` out.

The key list with types, units and defaults is documented in SCENARIOS.md.
"""

import json
import logging
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError

from .forms import ScenarioForm, error_paths

logger = logging.getLogger(__name__)

SCENARIO_SUFFIX = '.json'


def parse_scenario(text, name=''):
    """Parse and validate one scenario document.

    Raises ``ValidationError`` whose messages name the offending key path, or
    the line and column of a JSON syntax error.
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"line {e.lineno}, column {e.colno}: {e.msg}", code='syntax')
    if not isinstance(document, dict):
        raise ValidationError("a scenario document must be a JSON object", code='invalid')

    form = ScenarioForm(document)
    if not form.is_valid():
        raise ValidationError([
            f"{path}: {message}" if path else message
            for path, message in error_paths(form)
        ])
    cfg = form.result
    if not cfg.name:
        cfg = replace(cfg, name=name)
    return cfg


def find_scenario(path_or_name):
    """Resolve a file path, or the bare name of a scenario in ``SCENARIO_DIRS``."""
    path = Path(path_or_name)
    if path.is_file():
        return path
    if path.suffix != SCENARIO_SUFFIX and len(path.parts) == 1:
        for directory in settings.SCENARIO_DIRS:
            candidate = Path(directory) / f"{path.name}{SCENARIO_SUFFIX}"
            if candidate.is_file():
                return candidate
    raise FileNotFoundError(f"no scenario file or bundled scenario named {path_or_name!r}")


def load_scenario(path_or_name):
    path = find_scenario(path_or_name)
    logger.debug("Loading scenario from %s", path)
    return parse_scenario(path.read_text(encoding='utf-8'), name=path.stem)


def with_overrides(cfg, dt=None, t_max=None, sdf_mode=None, alpha=None, record_timing=None):
    """Apply command-line overrides, re-checking what the scenario form checks."""
    sim_changes = {
        key: value for key, value in (('dt', dt), ('t_max', t_max), ('record_timing', record_timing))
        if value is not None
    }
    controller_changes = {
        key: value for key, value in (('sdf_mode', sdf_mode), ('alpha', alpha))
        if value is not None
    }
    sim = replace(cfg.sim, **sim_changes)
    if not sim.dt > 0:
        raise ValueError(f"dt must be positive, got {sim.dt}")
    if not sim.t_max > sim.dt:
        raise ValueError(f"t_max ({sim.t_max}) must exceed dt ({sim.dt})")
    return replace(cfg, sim=sim, controller=replace(cfg.controller, **controller_changes))
