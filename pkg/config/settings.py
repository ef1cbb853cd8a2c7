"""
Django settings for the Barye project.

Barye has no web surface: the project is driven through management commands
(``run_scenario``, ``plot_run``, ``check_scenario``, ``bench_scenario``). The
settings below only configure the apps, logging and the numerical defaults the
controller falls back to when a scenario does not override them.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is signed; Django still expects a key to be present.
SECRET_KEY = config('SECRET_KEY', default='django-insecure-change-this-key')

DEBUG = config('DEBUG', default=True, cast=bool)


# Application definition

INSTALLED_APPS = [
    # Local apps
    "geometry",
    "control",
    "simulation",
]


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = "en-us"

USE_I18N = True

USE_TZ = True


# Robo-centric signed distance field
# The grid is the precomputed form of the field; the analytic path stays the
# reference. Margin and resolution are per scenario, these are the defaults.
SDF_GRID_MARGIN = config('SDF_GRID_MARGIN', default=3.0, cast=float)
SDF_GRID_RESOLUTION = config('SDF_GRID_RESOLUTION', default=0.05, cast=float)
SDF_GRID_MAX_CELLS = config('SDF_GRID_MAX_CELLS', default=4_000_000, cast=int)
# Empty disables the on-disk grid cache
SDF_GRID_CACHE_DIR = config('SDF_GRID_CACHE_DIR', default='')
SDF_GRADIENT_STEP = config('SDF_GRADIENT_STEP', default=1e-4, cast=float)

# Quadratic program
QP_TOLERANCE = config('QP_TOLERANCE', default=1e-8, cast=float)
QP_MAX_ITER = config('QP_MAX_ITER', default=200, cast=int)
# Empty disables dumping of non-optimal QP instances
QP_DUMP_DIR = config('QP_DUMP_DIR', default='')
KKT_CHECK_TOLERANCE = config('KKT_CHECK_TOLERANCE', default=1e-6, cast=float)

# Closed-loop simulation
GOAL_TOLERANCE = config('GOAL_TOLERANCE', default=0.1, cast=float)
MAX_INFEASIBLE_STEPS = config('MAX_INFEASIBLE_STEPS', default=10, cast=int)

# Bundled scenario files, looked up by name (e.g. "scenario_a")
SCENARIO_DIRS = [
    BASE_DIR / "simulation" / "scenarios",
]


# Logging
# https://docs.djangoproject.com/en/4.2/topics/logging/

LOG_LEVEL = config('LOG_LEVEL', default='INFO' if DEBUG else 'WARNING')

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "geometry": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "control": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "simulation": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
    },
}
