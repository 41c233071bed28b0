"""Dynamic adverse-selection model of seller reputation on online markets."""

__version__ = "0.1.0"

from .model import *  # noqa: F401,F403,E402
from .equilibrium import *  # noqa: F401,F403,E402
from .uniqueness import *  # noqa: F401,F403,E402
from .simulate import *  # noqa: F401,F403,E402
from .estimation import *  # noqa: F401,F403,E402
from .analysis import *  # noqa: F401,F403,E402
