"""Discrete fractional p-Laplace problems with measure data."""
from .absorption import (AbsorptionRun, critical_exponent, radial_slope, run_absorption,
                         run_power_absorption, subcritical_check)
from .capacity import (CapacityProblem, bessel_kernel, capacity, capacity_trend, grid_search_capacity,
                       point_capacity_regime)
from .domain import (DiscreteDomain, MeasureData, ball_domain, box_domain, interval_domain, mollify,
                     uniform_ball_density)
from .kernel import (KernelSpec, apply_operator, assemble_kernel, energy, tail, truncation_energy,
                     weak_form)
from .nonlinearity import Nonlinearity, tail_integral
from .norms import SeminormSpec, gagliardo_seminorm, weak_norm_star, weak_norm_sup
from .potential import (UniformBall, WolffQuery, check_ball_condition, check_wolff_composition,
                        wolff_field, wolff_potential)
from .solver import minimize_J, solve_linear, solve_sola
from .source import (fixed_point_iterate, measure_ball_constant, monotone_source_iterate,
                     solve_ball_constants)

__version__ = "0.1.0"
