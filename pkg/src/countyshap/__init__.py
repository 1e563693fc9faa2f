"""Population-weighted OLS and random forest regression with exact Shapley attributions."""
from .data import (
    CountyRecord,
    Dataset,
    Schema,
    SplitSpec,
    aggregate_precincts,
    join_by_fips,
    load_csv,
    train_test_split,
    validate,
)
from .forest import DecisionTree, Forest, ForestConfig, best_split, predict_forest, predict_tree, train_forest
from .metrics import compare_models, mae, r_squared
from .ols import OlsFit, fit_wls, summary_table
from .shapley import (
    ForestExplainer,
    ShapExplanation,
    baseline,
    batch_explain,
    coalition_value,
    shap_values,
    tree_expected_value,
)

__version__ = "0.1.0"

__all__ = [
    "CountyRecord", "Dataset", "Schema", "SplitSpec", "aggregate_precincts", "join_by_fips", "load_csv",
    "train_test_split", "validate",
    "DecisionTree", "Forest", "ForestConfig", "best_split", "predict_forest", "predict_tree", "train_forest",
    "compare_models", "mae", "r_squared",
    "OlsFit", "fit_wls", "summary_table",
    "ForestExplainer", "ShapExplanation", "baseline", "batch_explain", "coalition_value", "shap_values",
    "tree_expected_value",
]
