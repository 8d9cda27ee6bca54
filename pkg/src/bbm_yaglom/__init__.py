"""Monte Carlo toolkit for branching Brownian motion with absorption and its Yaglom limit."""
from .configs import PointConfiguration
from .engine import MovingBoundary, SimOutcome, SimParams
from .estimates import EstimateWithCI
from .rng import RandomStream

__version__ = "0.1.0"

__all__ = ["PointConfiguration", "MovingBoundary", "SimOutcome", "SimParams", "EstimateWithCI", "RandomStream", "__version__"]
