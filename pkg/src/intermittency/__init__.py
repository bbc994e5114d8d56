"""Noisy intermittent circle maps: orbit functionals, transfer operators and
Monte Carlo experiments on escape times and stochastic stability."""

__version__ = "0.1.0"

from . import errors, maps, rds, returns, transfer, experiments  # noqa: E402,F401
from .maps import MapSpec, doubling, lsv, pm, custom, validate_class  # noqa: E402,F401
from .rds import NoiseModel, NoiseSeq, orbit, sample_noise  # noqa: E402,F401
