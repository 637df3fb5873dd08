"""stabforest: seed-stable random-forest validation.

Deterministic random forests plus the repeated randomized-trials
protocol that stabilizes predictive accuracy and feature-importance
rankings across seeds, at both subject and group level.
"""

import os as _os
import sys as _sys

# honor the worker cap before the kernel backend fixes its thread pool
if "numba" not in _sys.modules:
    _want = _os.environ.get("STABFOREST_THREADS")
    if _want:
        _os.environ.setdefault("NUMBA_NUM_THREADS", str(max(1, int(_want))))

from .data import (
    DataError,
    Dataset,
    DatasetProfile,
    load_csv,
    split_train_test,
    subject_partition,
    write_csv,
)
from .forest import (
    MDI,
    OOB_PERMUTATION,
    Forest,
    ForestConfig,
    ForestError,
    ImportanceVector,
    compute_importance,
    gini_impurity,
    mdi_importance,
    oob_accuracy,
    oob_permutation_importance,
    predict,
    train_forest,
)
from .rng import RngState, derive_trial_seed, mix_seed, shuffle, splitmix64_next
from .stats import (
    StatsError,
    WelchResult,
    set_jaccard,
    spearman_rho,
    welch_t,
)
from .trials import (
    StabilityReport,
    TrialRecord,
    TrialsConfig,
    TrialsError,
    VoteTally,
    group_ranking,
    run_randomized_trials,
    run_subject_trials,
    stability_iteration,
    subject_ranking,
    tally_votes,
    top_k_features,
)
from .validation import (
    ConfusionMatrix,
    ValidationError,
    ValidationReport,
    compute_metrics,
    holdout_validate,
    kfold_validate,
    loocv_validate,
    loso_validate,
)

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "DataError",
    "Dataset",
    "DatasetProfile",
    "Forest",
    "ForestConfig",
    "ForestError",
    "ImportanceVector",
    "MDI",
    "OOB_PERMUTATION",
    "RngState",
    "StabilityReport",
    "StatsError",
    "TrialRecord",
    "TrialsConfig",
    "TrialsError",
    "ValidationError",
    "ValidationReport",
    "VoteTally",
    "WelchResult",
    "compute_importance",
    "compute_metrics",
    "derive_trial_seed",
    "gini_impurity",
    "group_ranking",
    "holdout_validate",
    "kfold_validate",
    "load_csv",
    "loocv_validate",
    "loso_validate",
    "mdi_importance",
    "mix_seed",
    "oob_accuracy",
    "oob_permutation_importance",
    "predict",
    "run_randomized_trials",
    "run_subject_trials",
    "set_jaccard",
    "shuffle",
    "spearman_rho",
    "split_train_test",
    "splitmix64_next",
    "stability_iteration",
    "subject_partition",
    "subject_ranking",
    "tally_votes",
    "top_k_features",
    "train_forest",
    "welch_t",
    "write_csv",
    "__version__",
]
