"""balancekit: optimization-based covariate balancing weights for causal
effect estimation, with a synthetic benchmark harness and CLI."""

__version__ = "0.1.0"

from .data import (ColumnInfo, Dataset, DesignMatrix, EstimandSpec, GroupPair,
                   PreprocessSpec, build_groups, load_csv, preprocess)
from .estimation import (EstimateResult, TruthRecord, ipw_sate_estimate,
                         ipw_satt_estimate, score, true_estimands,
                         weighted_diff_means)
from .estimators import (EntropyBalancer, KernelBalancer,
                         PropensityOddsBalancer, StableBalancer,
                         estimate_effect)
from .exceptions import (BalanceKitError, ConvergenceError,
                         InfeasibleProblemError, OutcomeWithheldError,
                         SchemaError)
from .methods import (FeatureSpec, WeightSolution, arb_satt, boss, cbps_exact,
                      cbsr_sate, ebal, ipw_weights, kom, mipmatch_lite, sbw)
from .metrics import (BinningSpec, KernelSpec, boss_objective, default_bins,
                      kernel_matrix, mean_imbalance, mmd_squared)
from .simulate import (PotentialOutcomes, ScenarioSpec, generate_scenario,
                       illustrative_example, stable_seed)
from .solvers import (SolveDiagnostics, SolverOptions, elastic_net,
                      entropy_dual_newton, logistic_fit, moment_newton,
                      qp_over_set, subset_search)
from .weight_sets import (WeightSet, contains, nearest_subset,
                          project_box_simplex, project_simplex)
