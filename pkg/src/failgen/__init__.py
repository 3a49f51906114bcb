"""failgen: learning and sampling collision-causing sensor noise at a four-way intersection."""

__version__ = "0.1.0"

from .config import RunConfig, WorldConfig, load_config, config_hash
from .geometry import Branch, Turn
from .simulator import run_simulation, SimulationResult

__all__ = [
    "RunConfig", "WorldConfig", "load_config", "config_hash",
    "Branch", "Turn", "run_simulation", "SimulationResult",
    "__version__",
]
