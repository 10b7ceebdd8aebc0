"""Sum-rate beamforming with sensing beampattern constraints for cell-free ISAC networks.

The main entry points are :func:`cfisac.solver.solve` (the ALMCI solver),
the baselines in :mod:`cfisac.baselines`, and the experiment runner
:func:`cfisac.experiment.run_experiment`.
"""

from .baselines import BaselineKind, grid_search_oracle, mmse_beamformer, zf_beamformer
from .config import ConfigError, ExperimentSpec, ScenarioConfig, SolverOptions, parse_config
from .scenario import BeamMatrix, ChannelSet, draw_channels, sum_rate
from .solver import SolveReport, solve

__all__ = [
    "BaselineKind",
    "BeamMatrix",
    "ChannelSet",
    "ConfigError",
    "ExperimentSpec",
    "ScenarioConfig",
    "SolveReport",
    "SolverOptions",
    "draw_channels",
    "grid_search_oracle",
    "mmse_beamformer",
    "parse_config",
    "solve",
    "sum_rate",
    "zf_beamformer",
]

__version__ = "0.1.0"
