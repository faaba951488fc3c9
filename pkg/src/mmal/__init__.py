"""Balanced multimodal active learning: strategy engine plus simulator."""

from .attribution import (
    AttributionResult,
    attribute,
    attribute_pool,
    contribution,
    dominance,
    model_outcome,
    modulation_weights,
    shapley_exact,
    shapley_two,
)
from .data import (
    Dataset,
    FeatureSchema,
    MultimodalSample,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    load_features,
    save_dataset,
)
from .embedding import GradientEmbedding, gradient_embedding, modulated_embedding
from .errors import ConfigError, LoadError
from .evaluation import (
    PairwiseMatrix,
    classwise_delta,
    dominated_subset_stats,
    mean_contribution,
    pairwise_matrix,
    welch_ttest,
)
from .loop import ExperimentConfig, ReportBundle, RoundReport, run_experiment, run_suite
from .model import (
    ModelDims,
    ModelParams,
    TrainConfig,
    evaluate,
    forward,
    init_model,
    load_model,
    loss_final,
    save_model,
    train,
)
from .strategies import (
    QueryRequest,
    QueryResult,
    kmeanspp_seed,
    run_query,
    select_badge,
    select_bmmal,
    select_coreset,
    select_entropy,
    select_random,
    split_pool_query,
)

__version__ = "0.1.0"
