"""Outcome-optimizing treatment policies from observational data.

Pipeline: preprocess tabular data and embedding files, estimate a
counterfactual reward matrix (direct or doubly-robust), train a
softmax-policy network on it, distill the policy into an interpretable
tree, and evaluate everything with improvement / realism / stability
metrics over seeded multi-split experiments.
"""

from .data_pipeline import (
    EmbeddingMatrix,
    FeatureMatrix,
    FeatureSchema,
    PcaModel,
    RawTable,
    SplitPlan,
    concat_modalities,
    fit_pca,
    fit_schema,
    impute_missing,
    make_split,
    project,
    reconstruct,
    transform,
    transform_raw,
)
from .distill import MirroredTree, distill, export_tree, fidelity, tree_from_json
from .errors import ConfigError, DataError, NumericalError, SchemaError, ToolkitError
from .evaluation import (
    ExperimentConfig,
    MetricReport,
    coverage,
    improvement,
    mean_abs_difference,
    regress_compare,
    revenue_improvement,
    run_experiment,
    stability,
)
from .network import (
    PnnConfig,
    PnnModel,
    TrainTrace,
    default_config,
    forward,
    grad_check,
    model_from_json,
    model_to_json,
    policy_loss,
    prescribe,
    prescribe_thresholded,
    train,
)
from .rewards import (
    PropensityMatrix,
    RewardMatrix,
    TreatmentSpace,
    doubly_robust,
    dr_policy_value,
    estimate_continuous,
    estimate_direct,
    estimate_propensity,
)
from .seeding import derive_seed
from .synthetic import Dataset, make_synthetic
from .trees import (
    ForestModel,
    TreeNode,
    fit_forest,
    fit_tree,
    forest_from_json,
    forest_to_json,
    oob_predictions,
    predict_proba,
    predict_value,
)

__version__ = "0.1.0"
