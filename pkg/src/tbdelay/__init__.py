"""Delayed TB compartmental model: stability analysis and optimal control."""

__version__ = "0.1.0"

from .errors import (BlowupError, ConvergenceFailure, GridError, JobError,
                     NoEndemicEquilibrium, ParameterDomainError, RangeError,
                     TbDelayError)
from .model import (ControlVec, EquilibriumKind, EquilibriumPoint, ModelParams,
                    R0Breakdown, StateVec, basic_reproduction_number,
                    disease_free_equilibrium, endemic_equilibrium,
                    rhs_controlled, rhs_uncontrolled, sum_derivative_check)
from .integrator import (DelayConfig, Grid, HistorySpec,
                         PiecewiseConstantControl, Trajectory, integrate,
                         propagate_reduced)
from .stability import (CharCoefficients, CrossingQuartic, LinearizedDDE,
                        StabilityVerdict, VerdictKind, char_eval, classify,
                        count_roots_rectangle, crossing_quartic,
                        crossing_quartic_from_linearization,
                        dfe_char_coefficients, linearize, quartic_real_roots,
                        quasi_polynomial, real_root_isolation,
                        rightmost_root_scan, routh_hurwitz_quartic)
from .ocp import (BangBangReport, ObjectiveKind, ObjectiveSpec, OcpProblem,
                  OcpSolution, adjoint_backward, gradient_of_controls,
                  objective_of_controls, running_cost, solve, switching_trace,
                  verify_bang_bang)
from .iop import (ArcSchedule, BetaRecord, HessianReport, SweepResult,
                  beta_sweep, fd_gradient, fd_hessian, hessian_fd,
                  optimize_switch_times, simulate_schedule)
