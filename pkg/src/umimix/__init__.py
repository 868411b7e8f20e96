"""Dirichlet-multinomial mixture clustering for sparse UMI count matrices."""

__version__ = "0.1.0"

from .countmatrix import (
    FilterReport,
    SparseCountMatrix,
    filter_cells_and_genes,
    load_dense_tsv,
    load_sparse_matrix,
    select_top_variable_genes,
    write_dense_tsv,
    write_matrix_market,
)
from .diagnostics import beta_marginal_table, mean_variance_regression
from .em import (
    DirichletMixtureModel,
    FitConfig,
    FitResult,
    ResponsibilityMatrix,
    e_step,
    fit,
    fit_multi_restart,
    m_step_alpha,
    m_step_pi,
)
from .errors import (
    EstimationError,
    FilterError,
    FitError,
    MatrixFormatError,
    UmimixError,
    ValidationError,
)
from .initialize import (
    InitStrategy,
    build_initial_model,
    kmeans_labels,
    random_labels,
    ronning_alpha,
    weir_hill_alpha,
)
from .metrics import (
    adjusted_rand_index,
    ari_summary,
    best_cluster_mapping,
    contingency_table,
    vague_cells,
)
from .polya import (
    AlphaVector,
    beta_marginal_params,
    dirichlet_mean_variance,
    log_polya_likelihood,
)
from .selection import SelectionTable, select_k
from .simulate import SimulationSpec, build_spec, compute_snr, make_scenario, simulate

__all__ = [
    "AlphaVector",
    "DirichletMixtureModel",
    "EstimationError",
    "FilterError",
    "FilterReport",
    "FitConfig",
    "FitError",
    "FitResult",
    "InitStrategy",
    "MatrixFormatError",
    "ResponsibilityMatrix",
    "SelectionTable",
    "SimulationSpec",
    "SparseCountMatrix",
    "UmimixError",
    "ValidationError",
    "adjusted_rand_index",
    "ari_summary",
    "best_cluster_mapping",
    "beta_marginal_params",
    "beta_marginal_table",
    "build_initial_model",
    "build_spec",
    "compute_snr",
    "contingency_table",
    "dirichlet_mean_variance",
    "e_step",
    "filter_cells_and_genes",
    "fit",
    "fit_multi_restart",
    "kmeans_labels",
    "load_dense_tsv",
    "load_sparse_matrix",
    "log_polya_likelihood",
    "m_step_alpha",
    "m_step_pi",
    "make_scenario",
    "mean_variance_regression",
    "random_labels",
    "ronning_alpha",
    "select_k",
    "select_top_variable_genes",
    "simulate",
    "vague_cells",
    "weir_hill_alpha",
    "write_dense_tsv",
    "write_matrix_market",
]
