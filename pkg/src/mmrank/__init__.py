"""Pairwise learning-to-rank over text, image, and multimodal features.

Listings are embedded as a sparse binary text block (title and tag
terms plus listing/shop id columns) optionally concatenated with an
L2-normalized dense image vector. Per-query linear models are trained
on signed difference vectors mined from logged sessions, tuned on
validation NDCG, and compared across modalities with paired
significance tests. A synthetic world generator makes the whole loop
reproducible on a desk machine.
"""

from .corpus import (
    Catalog,
    Interaction,
    InteractionKind,
    Listing,
    Session,
    load_catalog,
    load_sessions,
    relevance_of,
    save_catalog,
    save_sessions,
)
from .embedding import (
    Embedder,
    EmbeddingStore,
    Modality,
    MultimodalVector,
    SparseVector,
    Vocabulary,
    build_vocabulary,
    embed_multimodal,
    embed_text,
    load_embedding_store,
    normalize_l2,
    save_embedding_store,
)
from .metrics import (
    ComparisonResult,
    WilcoxonResult,
    dcg,
    macro_average,
    ndcg,
    paired_comparison,
    relative_lift,
    wilcoxon_signed_rank,
)
from .pairgen import (
    PairwiseInstance,
    PreferencePair,
    make_instances,
    mine_preference_pairs,
)
from .pipeline import (
    ExperimentConfig,
    QueryDecision,
    continuum_report,
    disentangle_report,
    run_experiment,
    save_report,
)
from .ranksvm import (
    QueryModel,
    TrainConfig,
    load_model,
    objective,
    pairwise_error,
    rank,
    save_model,
    score,
    train_sgd,
)
from .synthlog import (
    GroundTruth,
    WorldSpec,
    fairpairs_shuffle,
    generate_eval_sessions,
    generate_sessions,
    generate_world,
)

__version__ = "0.1.0"

__all__ = [
    "Catalog", "Interaction", "InteractionKind", "Listing", "Session",
    "load_catalog", "load_sessions", "relevance_of", "save_catalog",
    "save_sessions",
    "Embedder", "EmbeddingStore", "Modality", "MultimodalVector",
    "SparseVector", "Vocabulary", "build_vocabulary", "embed_multimodal",
    "embed_text", "load_embedding_store", "normalize_l2",
    "save_embedding_store",
    "ComparisonResult", "WilcoxonResult", "dcg", "macro_average", "ndcg",
    "paired_comparison", "relative_lift", "wilcoxon_signed_rank",
    "PairwiseInstance", "PreferencePair", "make_instances",
    "mine_preference_pairs",
    "ExperimentConfig", "QueryDecision", "continuum_report",
    "disentangle_report", "run_experiment", "save_report",
    "QueryModel", "TrainConfig", "load_model", "objective", "pairwise_error",
    "rank", "save_model", "score", "train_sgd",
    "GroundTruth", "WorldSpec", "fairpairs_shuffle", "generate_eval_sessions",
    "generate_sessions", "generate_world",
    "__version__",
]
