from .forest import RegressionForest, RegressionTree, forest_fit, forest_predict
from .impute import ImputeReport, iterative_impute, linear_interp_init, neighbor_interp
from .outliers import (OutlierCandidateSet, build_candidate_set, cluster_lof, dbscan_cluster,
                       detect_outliers, lof_score, lof_threshold)
from .scada import CleaningParams, CleaningReport, clean_scada

__all__ = [
    "RegressionForest", "RegressionTree", "forest_fit", "forest_predict",
    "ImputeReport", "iterative_impute", "linear_interp_init", "neighbor_interp",
    "OutlierCandidateSet", "build_candidate_set", "cluster_lof", "dbscan_cluster",
    "detect_outliers", "lof_score", "lof_threshold",
    "CleaningParams", "CleaningReport", "clean_scada",
]
