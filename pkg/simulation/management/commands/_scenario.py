from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from simulation.loader import load_scenario


def load_or_fail(path_or_name):
    """Load a scenario, turning every loading problem into a ``CommandError``."""
    try:
        return load_scenario(path_or_name)
    except FileNotFoundError as e:
        raise CommandError(str(e))
    except OSError as e:
        raise CommandError(f"cannot read {path_or_name}: {e}")
    except ValidationError as e:
        raise CommandError("invalid scenario:\n  " + "\n  ".join(e.messages))
