"""Simulation toolkit for assembled Rydberg atom arrays.

Modules
-------
lattice     trap-array geometry, occupancy grids and target patterns
assembler   atom-by-atom rearrangement planning and execution
dynamics    Lindblad dynamics of small Rydberg clusters
noise       shot-to-shot noise, detection errors and recapture Monte Carlo
analysis    damped-Rabi, beam-profile and collective-scaling fits
experiments desk-scale runners used by the command line
"""

from importlib.resources import files

from .lattice import OccupancyGrid, SiteIndex, TargetPattern, TrapArray, preset_array

__version__ = "0.1.0"


def pattern_path(name):
    """Path of a bundled pattern file (e.g. ``"supergrid_5x5.txt"``)."""
    return files(__package__) / "patterns" / name


__all__ = ["OccupancyGrid", "SiteIndex", "TargetPattern", "TrapArray", "preset_array", "pattern_path"]
