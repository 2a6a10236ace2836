"""Sampled-data primal-dual gradient MPC with eigenvalue stability certificates."""
from .baselines import (CgmresController, CgmresState, MpcOracleController, QpSolution,
                        cgmres_init, cgmres_residual, cgmres_step, fischer_burmeister, qp_solve,
                        solve_qp)
from .certify import (Certificate, build_W, certify_ct, certify_dt, controller_supply_ct,
                      plant_supply_ct, plant_supply_dt, pre_stabilize, smoothness_matrices)
from .errors import (AssumptionError, CertificationError, ConfigError, CyclingError,
                     DimensionError, DivergenceError, DomainError, InconsistentTargetError,
                     NonConvergenceError, NumericError, PdgMpcError, SingularMatrixError)
from .harness import (BenchReport, Metrics, SimConfig, SimLog, bench, export, load_log, metrics,
                      normalized_table, simulate)
from .model import (ContinuousPlant, DiscretePlant, SteadyTarget, discretize,
                    from_error_coordinates, steady_input, to_error_coordinates)
from .numkit import expm, golden_min, sym_eig_max, solve_linear
from .ocp import (CondensedQp, OcpSpec, ProjectionPair, build_equality, build_inequality,
                  build_objective, build_ocp, build_projection, condense)
from .pdg import (PdgController, PdgParams, PdgState, StepOutcome, analytic_gamma, candidate,
                  cont_field, delta_V, equilibrium_probe, eta_bar, find_gamma, plus_op, step)

__version__ = "0.1.0"
