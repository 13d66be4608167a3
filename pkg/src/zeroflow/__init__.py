"""Gaussian random polynomial zeros on the Riemann sphere: weighted potential theory and large deviations."""
__version__ = "0.1.0"

from .errors import (CollisionWarning, ConditioningWarning, ConfigError, DiagonalError, DomainError,
                     IterationError, PrecisionWarning, ResolutionError, SmoothnessError, ZeroflowError)
from .geometry import (GreenConstant, Metric, PointSet, SpherePoint, chordal, compute_green_constant,
                       curvature_density, fubini_study, green, green_average, metric_from_descriptor, phi,
                       sphere_quadrature)
from .cells import CellSet
from .measures import (AtomicMeasure, GridMeasure, energy_form_distance, green_energy, potential, rate,
                       rate_local, sup_potential)
from .equilibrium import EquilibriumOptions, EquilibriumResult, constrained_rate_inf, solve_equilibrium
from .ensemble import (Ensemble, ReferenceMeasure, ZeroConfig, bernstein_markov_ratio, fs_area, gram,
                       orthonormalize, preset, roots, sample, uniform_circle)
from .density import DensityEval, RateN, log_jpd_affine, log_jpd_green, log_zhat_sequence, rate_n
