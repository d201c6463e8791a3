"""Numerical laboratory for removable singularities of harmonic maps into
pseudo-Riemannian manifolds.

Modules: :mod:`geometry` (metrics, Christoffel symbols, normal
coordinates), :mod:`grid` (masked lattices and grid functions),
:mod:`elliptic` (Dirichlet solvers), :mod:`holder` (weighted Hölder norms),
:mod:`harmonic_map` (Picard fixed point), :mod:`regularity` (Hölder
continuity machinery), :mod:`maxprinciple` (comparison functional),
:mod:`capacity` (capacity potentials), :mod:`pipeline` and :mod:`cli`.
"""
from .errors import *  # noqa: F401,F403
from .geometry import (MetricChart, NormalCoordinateMap, christoffel, chart_constants,
                       metric_inverse, normal_coordinates, parse_chart)
from .grid import Domain, Grid, GridFunction, build_grid, norms
from .elliptic import harmonic_extension, solve_poisson_dirichlet, solve_weighted_dirichlet
from .harmonic_map import PicardConfig, picard_solve
from .capacity import run_capacity
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"
