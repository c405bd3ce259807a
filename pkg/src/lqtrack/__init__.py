"""Linear-quadratic tracking with nonlinear drift perturbations.

Four routes to the same value function, built to cross-check each other:

* ``riccati``    exact quadratic solution of the unperturbed problem (ODEs);
* ``hjb``        finite-difference solution of the full nonlinear PDE;
* ``bsde``       regression Monte Carlo on two forward representations;
* ``expansion``  first-order correction in the perturbation size delta.

``problem`` defines the model and validates its standing assumptions,
``sde`` simulates the state paths, and ``config``/``harness`` wire
everything into a reproducible command-line workflow.
"""

from .bsde import (BasisConfig, BsdeSolution, RepresentationReport,
                   combined_se, representation_check, routes_agree, run_route,
                   solve_bsde, solve_bsde_drifted, solve_bsde_driftless)
from .config import (ConfigError, ExperimentConfig, config_hash,
                     config_to_toml, load_config, parse_config)
from .expansion import (ExpansionResult, QuarticFit, StudyTable,
                        baseline_surface, control_correction,
                        convergence_study, expand, first_order_correction,
                        fit_quartic)
from .grids import SpaceGrid, TimeGrid
from .hjb import (SchemeConfig, TransformedSurface, ValueSurface,
                  clamped_feedback, exp_transform, export_surface_csv,
                  feedback_control, hjb_residual, inverse_transform,
                  solve_hjb)
from .problem import (HRatio, ProblemSpec, ValidationReport,
                      preset_constant_lqr, preset_cubic, validate)
from .riccati import (LqrSolution, closed_form_curves, closed_form_example,
                      solve_lqr, write_lqr_csv)
from .sde import (PathBundle, deviation_check, moment_check, simulate,
                  zero_control_cost)
from .timefuncs import (PERTURBATIONS, TimeFunction, as_time_function,
                        perturbation_from_descriptor)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # problem
    "ProblemSpec", "ValidationReport", "HRatio", "validate",
    "preset_constant_lqr", "preset_cubic",
    "TimeFunction", "as_time_function", "PERTURBATIONS",
    "perturbation_from_descriptor",
    # grids
    "TimeGrid", "SpaceGrid",
    # riccati
    "LqrSolution", "solve_lqr", "write_lqr_csv",
    "closed_form_curves", "closed_form_example",
    # hjb
    "ValueSurface", "TransformedSurface", "SchemeConfig", "solve_hjb",
    "feedback_control", "clamped_feedback", "hjb_residual",
    "exp_transform", "inverse_transform", "export_surface_csv",
    # sde
    "PathBundle", "simulate", "moment_check", "deviation_check",
    "zero_control_cost",
    # bsde
    "BasisConfig", "BsdeSolution", "RepresentationReport", "solve_bsde",
    "solve_bsde_drifted", "solve_bsde_driftless", "run_route",
    "combined_se", "routes_agree", "representation_check",
    # expansion
    "ExpansionResult", "QuarticFit", "StudyTable", "baseline_surface",
    "first_order_correction", "expand", "fit_quartic",
    "control_correction", "convergence_study",
    # config
    "ExperimentConfig", "ConfigError", "load_config", "parse_config",
    "config_to_toml", "config_hash",
]
