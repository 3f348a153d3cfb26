"""Correlated random-matrix models with K-dependent entries.

Kernel tables and moving-average filters define the entry covariance;
the package solves the associated self-consistent matrix equation at
finite size and in the large-N limit, samples matching ensembles, and
verifies the predicted spectral laws (global/local resolvent closeness,
density fit, eigenvector delocalization, gap statistics, and covariance
preservation under the matrix Ornstein-Uhlenbeck flow).
"""

from ._rng import child_seed, stream
from .errors import (CapacityError, DomainEscapeError, InputError, ModelError,
                     NonConvergenceError, SolverError, SymmetryError)
from .io import (SCHEMA_VERSION, load_model_file, model_content_hash,
                 parse_model, read_cmat, write_csv, write_report,
                 write_sample_cmat, write_solution_cmat)
from .limit import (DensityCurve, LimitGrid, LimitOperator, LimitSolution,
                    classical_locations, consistency_check, density_curve,
                    discretize_limit, limit_decay_bound, solve_limit,
                    stieltjes_trace)
from .mde import (DecayProfile, DysonSolution, SpectralParameter, as_spectral,
                  decay_profile, f_map, residual_norm, solve_finite,
                  stability_probe, xi_map)
from .profiles import (COVARIANCE_CAP, TABLE_KINDS, CorrelationProfile,
                       FilterSpec, KernelView, PositivityResult,
                       ValidationReport, Violation, build_covariance,
                       check_positivity, hat_psi, pair_index,
                       profile_from_filter, psi_eval, validate_profile,
                       xi_eval)
from .sampling import (MatrixSample, empirical_covariance, entry_samples,
                       exact_pair_values, goe_sample, ou_entry_paths,
                       ou_evolve, sample, sample_gaussian_exact)
from .verify import (DelocalizationStats, LawRecord, LawReport, OUFlowReport,
                     SpacingResult, SpectralStats, delocalization_stats,
                     eigen, empirical_sce_residual, green_function,
                     ks_statistic, law_check, ou_flow_check, spacing_stats,
                     surmise_cdf, unfold_gaps)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "CorrelationProfile", "COVARIANCE_CAP", "DecayProfile",
    "DelocalizationStats", "DensityCurve", "DomainEscapeError",
    "DysonSolution", "FilterSpec", "InputError", "KernelView", "LawRecord",
    "LawReport", "LimitGrid", "LimitOperator", "LimitSolution",
    "MatrixSample", "ModelError", "NonConvergenceError", "OUFlowReport",
    "PositivityResult", "SCHEMA_VERSION", "SolverError", "SpacingResult",
    "SpectralParameter", "SpectralStats", "SymmetryError", "TABLE_KINDS",
    "ValidationReport", "Violation", "as_spectral", "build_covariance",
    "check_positivity", "child_seed", "classical_locations",
    "consistency_check", "decay_profile", "delocalization_stats",
    "density_curve", "discretize_limit", "eigen", "empirical_covariance",
    "empirical_sce_residual", "entry_samples", "exact_pair_values", "f_map",
    "goe_sample", "green_function", "hat_psi", "ks_statistic", "law_check",
    "limit_decay_bound", "load_model_file", "model_content_hash",
    "ou_entry_paths", "ou_evolve", "ou_flow_check", "pair_index",
    "parse_model", "profile_from_filter", "psi_eval", "read_cmat",
    "residual_norm", "sample", "sample_gaussian_exact", "solve_finite",
    "solve_limit", "spacing_stats", "stability_probe", "stieltjes_trace",
    "stream", "surmise_cdf", "unfold_gaps", "validate_profile", "write_csv",
    "write_report", "write_sample_cmat", "write_solution_cmat", "xi_eval",
    "xi_map",
]
