"""Tabular classification with group-fairness auditing for clinical cohorts.

Five from-scratch classifiers (logistic regression, kernel SVM, k-NN, decision
tree, random forest) evaluated under demographic-aware and demographic-unaware
protocols with stratified cross-validation, macro-F1, equalized odds across
gender/race/age, and permutation feature importance.
"""

from ._version import __version__
from .dataset import (
    AWARE,
    PROTOCOLS,
    UNAWARE,
    ClassSpec,
    Cohort,
    CohortSpec,
    FeatureMatrix,
    PatientRecord,
    Scaler,
    StatBlock,
    age_bin_labels,
    apply_minmax,
    bin_age,
    encode_features,
    fit_minmax,
    load_cohort_csv,
    stratified_kfold,
    subset_cohort,
    synthesize_cohort,
    write_cohort_csv,
)
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    config_from_dict,
    default_model_grid,
    load_experiment_config,
    parse_model_name,
    run_experiment,
)
from .importance import ImportanceResult, permutation_importance
from .metrics import (
    ConfusionCounts,
    GroupRates,
    confusion,
    equalized_odds,
    f1_score,
    group_rates,
    macro_f1,
)
from .models import (
    ModelSpec,
    TrainedModel,
    kernel_eval,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    train,
)
from .report import emit_report, load_report_json
from .specfile import cohort_spec_from_dict, default_cohort_spec, load_cohort_spec

__all__ = [
    "__version__",
    "AWARE",
    "UNAWARE",
    "PROTOCOLS",
    "PatientRecord",
    "Cohort",
    "CohortSpec",
    "ClassSpec",
    "StatBlock",
    "FeatureMatrix",
    "Scaler",
    "load_cohort_csv",
    "write_cohort_csv",
    "synthesize_cohort",
    "stratified_kfold",
    "subset_cohort",
    "encode_features",
    "fit_minmax",
    "apply_minmax",
    "bin_age",
    "age_bin_labels",
    "ModelSpec",
    "TrainedModel",
    "train",
    "kernel_eval",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "ConfusionCounts",
    "GroupRates",
    "confusion",
    "f1_score",
    "macro_f1",
    "group_rates",
    "equalized_odds",
    "ImportanceResult",
    "permutation_importance",
    "ExperimentConfig",
    "ExperimentReport",
    "default_model_grid",
    "parse_model_name",
    "config_from_dict",
    "load_experiment_config",
    "run_experiment",
    "emit_report",
    "load_report_json",
    "cohort_spec_from_dict",
    "load_cohort_spec",
    "default_cohort_spec",
]
