"""Sparse factorization machines for student performance prediction.

Encode chronological (student, item, outcome) logs into sparse feature rows
(one-hot users/items/skills plus per-skill win/fail or attempt counters),
fit a factorization machine by MAP gradient descent (logit link) or Gibbs
sampling (probit link), and evaluate under cross-validation. Classic student
models fall out as encoding presets: IRT/Rasch, MIRT with biases, the
additive factor model, and performance factor analysis.
"""

__version__ = "0.1.0"

from .encoding import (
    CounterState,
    EncodingConfig,
    EncodingError,
    QMatrix,
    Triplet,
    encode_dataset,
    encode_extra,
    load_qmatrix,
    update_counters,
)
from .evaluation import (
    CVReport,
    FoldMetrics,
    FoldSpec,
    accuracy,
    auc,
    make_folds,
    run_cv,
)
from .model import (
    FMParams,
    Link,
    export_embeddings,
    predict_proba,
    predict_proba_matrix,
    preset_encoding,
    raw_score,
    raw_scores,
    read_embeddings,
)
from .datasets import (
    Dataset,
    SynthSpec,
    Vocabulary,
    generate_synthetic,
    load_dataset,
    load_triplets,
    oracle_probabilities,
    write_synthetic,
    write_triplets,
)
from .persistence import ModelBundle, load_model, save_model
from .sparse import (
    DesignMatrix,
    FeatureSpace,
    LayoutError,
    SparseRow,
    feature_index,
    load_design_matrix,
    sparse_dot,
)
from .training import (
    GibbsOutput,
    HyperPriors,
    TrainConfig,
    TrainingDivergedError,
    init_params,
    nll,
    nll_gradient,
    train_gibbs_probit,
    train_map_logit,
)

__all__ = [
    "__version__",
    "CounterState",
    "CVReport",
    "Dataset",
    "DesignMatrix",
    "EncodingConfig",
    "EncodingError",
    "FMParams",
    "FeatureSpace",
    "FoldMetrics",
    "FoldSpec",
    "GibbsOutput",
    "HyperPriors",
    "LayoutError",
    "Link",
    "ModelBundle",
    "QMatrix",
    "SparseRow",
    "SynthSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "Triplet",
    "Vocabulary",
    "accuracy",
    "auc",
    "encode_dataset",
    "encode_extra",
    "export_embeddings",
    "feature_index",
    "generate_synthetic",
    "init_params",
    "load_dataset",
    "load_design_matrix",
    "load_model",
    "load_qmatrix",
    "load_triplets",
    "make_folds",
    "nll",
    "nll_gradient",
    "oracle_probabilities",
    "predict_proba",
    "predict_proba_matrix",
    "preset_encoding",
    "raw_score",
    "raw_scores",
    "read_embeddings",
    "run_cv",
    "save_model",
    "sparse_dot",
    "train_gibbs_probit",
    "train_map_logit",
    "update_counters",
    "write_synthetic",
    "write_triplets",
]
