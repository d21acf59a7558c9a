"""LATE estimation and inference under covariate-adaptive randomization
with imperfect compliance, plus a Monte Carlo study harness."""

__version__ = "0.1.0"

from .data import (DataError, ExperimentData, StrataIndex, build_dataset,
                   index_strata, read_csv, write_csv)
from .randomization import (AssignmentDraw, ConfigError, SchemeConfig, assign,
                            assign_bcd, assign_sbr, assign_srs, assign_wei,
                            imbalance, make_scheme)
from .solvers import (LassoFit, LinearFit, LogisticFit, iterate_loadings,
                      lasso_logit, lasso_ls, logistic_mle, normal_cdf,
                      normal_quantile, ols, rho_tuning)
from .basis import general_sieve, sieve_basis
from .adjustments import (AdjustmentError, AdjustmentSurface, RegressorSpec,
                          adjust_further, adjust_none, adjust_nonparametric,
                          adjust_ols_logit, adjust_optimal_linear,
                          adjust_regularized, build_surface)
from .estimators import (EstimationError, LateEstimate, SEstimate,
                         TslsEstimate, WaldTest, dr_late, dr_variance,
                         estimate, s_estimator, tsls, wald)
from .simulation import (DgpSpec, MethodSummary, PotentialData,
                         SimulationError, SimulationReport, TrueTau,
                         gen_potential, realize, run_mc, true_tau)

__all__ = [name for name in dir() if not name.startswith("_")]
