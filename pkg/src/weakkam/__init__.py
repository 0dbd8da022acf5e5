"""Variational solution semigroup for Hamilton-Jacobi equations whose
Hamiltonian depends on the unknown, on the one-dimensional torus."""

from .characteristics import (CharState, CharTrajectory, char_rhs, classical_patch, energy_law_residual,
                              integrate)
from .convergence import (ConvergenceReport, LimsupOptions, StationaryOptions, energy_at_terminal,
                          energy_along_run, limsup_analysis, limsup_fixed_point, run_to_stationary,
                          stationary_residual)
from .fd_oracle import LFConfig, lf_evolve, lf_step
from .grid import GridFn, GridMismatchError, Torus1, interp, lipschitz_estimate, one_sided_slopes, sup_dist, sup_norm
from .hamiltonian import (HamiltonianModel, SampleSpec, ValidationReport, calibrate_alpha, critical_value,
                          discounted_generic, discounted_mechanical, finite_diff_check, quartic,
                          validate_hypotheses)
from .lax_oleinik import (CalibratedCurve, SchemeOptions, SemigroupState, SpaceTimeFn, apply_A,
                          backtrack_calibrated, evolve, fixed_point_of_A, step)
from .legendre import LagrangianView, lagrangian, velocity_of_momentum, verify_involution

__version__ = "0.1.0"
