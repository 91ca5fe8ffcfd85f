"""Scan-statistic discovery of treatment-affected subpopulations."""

__version__ = "0.1.0"

from .data_model import (
    CellTable,
    CovariateSchema,
    DataError,
    Record,
    Subpopulation,
    SubsetCounts,
    build_cell_table,
    subset_counts,
)
from .inference import permutation_test
from .kernels import BACKEND
from .oracle import exhaustive_scan
from .reference import PValueRange, ReferenceDistribution, candidate_alphas, p_value_range, significance_mass
from .scan import ScanConfig, ScanResult, subpopulation_scan
from .score import ScoreKind, ScoredAlpha, max_over_alpha, score_bj, score_na

__all__ = [
    "BACKEND",
    "CellTable",
    "CovariateSchema",
    "DataError",
    "PValueRange",
    "Record",
    "ReferenceDistribution",
    "ScanConfig",
    "ScanResult",
    "ScoreKind",
    "ScoredAlpha",
    "Subpopulation",
    "SubsetCounts",
    "build_cell_table",
    "candidate_alphas",
    "exhaustive_scan",
    "max_over_alpha",
    "p_value_range",
    "permutation_test",
    "score_bj",
    "score_na",
    "significance_mass",
    "subpopulation_scan",
    "subset_counts",
]
