"""Numerical toolkit for ancient bubble-sheet mean curvature flows in R^4.

Modules:

- ``grid``, ``geometry``: the graph of the renormalized flow over R^2 x S^1(sqrt 2)
- ``spectral``: Gaussian-weighted projections onto Ornstein-Uhlenbeck modes
- ``solver``, ``scenarios``: explicit time stepping and experiment configuration
- ``modes``: the quadratic-mode ODE and its (x, y) phase plane
- ``barriers``: shrinker-with-boundary profiles, rotated barriers, bowl translator
- ``harness``, ``cli``: validation, data emission and the command line
"""
from .errors import (BlowUpError, BubbleSheetError, ConfigurationError, DomainError, InputError,
                     SolverError, StiffnessError)
from .scenarios import ScenarioConfig

__version__ = "0.1.0"

__all__ = ["BlowUpError", "BubbleSheetError", "ConfigurationError", "DomainError", "InputError",
           "ScenarioConfig", "SolverError", "StiffnessError", "__version__"]
