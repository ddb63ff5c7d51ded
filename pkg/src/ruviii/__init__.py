"""Removal of unwanted variation using technical replicates and negative controls."""

__version__ = "0.1.0"

from .errors import (
    ConvergenceWarning,
    NumericalError,
    RuvError,
    SingularSystemError,
    ValidationError,
)
from .estimator import KScanResult, Ruv3Fit, fit, fit_with_eigen, k_max, k_scan, removed_norm_sq
from .model import (
    AssayMatrix,
    ControlMask,
    Dataset,
    MappingMatrix,
    build_mapping,
    split_columns,
    validate_dataset,
)
from .projections import (
    SymmetricEigen,
    center_columns,
    euclidean_norm_sq,
    replicate_means,
    replicate_residuals,
    residual_gram,
    spectral_norm,
    sym_eigen_desc,
    weyl_gap,
)
from .prps import (
    AveragingMatrix,
    ExtendedDataset,
    PrpsPlan,
    PrpsWarning,
    PseudoSample,
    averaging_matrix,
    build_prps_plan,
    extend_dataset,
    fast_fit,
    original_rows,
    plan_from_groups,
)
from .simulate import (
    SimResult,
    SimScenario,
    TrendSpec,
    decay_slope,
    gen_dataset,
    gen_prps_scenario,
    rel_error_q,
    run_grid,
    run_grid_variants,
)
