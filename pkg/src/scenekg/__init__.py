"""Context-dependent anomaly detection on object-scene knowledge graphs.

Builds co-occurrence knowledge graphs from labeled scene annotations, trains
translation-family link predictors on them, and ranks the objects of a new
input by how poorly they fit the context, flagging the one that does not
belong.
"""

from .anomaly import (
    AnomalyDatapoint,
    AnomalyRanking,
    InferenceConfig,
    anomaly_score,
    detect,
    evaluate_topk,
    object_score,
    predict_scenes,
    scene_score,
    sweep,
)
from .datagen import (
    SplitSet,
    SyntheticWorldSpec,
    generate_out_of_scene,
    generate_synthetic_world,
    generate_unique_out_of_scene,
    restrict_to_vocabulary,
    split_annotations,
)
from .errors import ConfigError, DataError, NoValidCorruption, SceneKGError, TrainingError
from .graph import KnowledgeGraph, load_graph, save_graph
from .ingest import (
    apply_class_whitelist,
    apply_frequency_filter,
    ingest_annotations,
    merge_external_triples,
)
from .linkpred import LinkMetrics, RankResult, evaluate, rank_triple
from .models import (
    EmbeddingModel,
    ModelKind,
    load_checkpoint,
    save_checkpoint,
    score_triple,
)
from .schema import Entity, RelationType, SceneAnnotation, Triple, household_schema
from .scoring import ScoreTable, build_score_table
from .training import (
    LRSchedule,
    REFERENCE_PRESETS,
    TrainConfig,
    corrupt_triple,
    grid_search,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyDatapoint",
    "AnomalyRanking",
    "ConfigError",
    "DataError",
    "EmbeddingModel",
    "Entity",
    "InferenceConfig",
    "KnowledgeGraph",
    "LinkMetrics",
    "LRSchedule",
    "ModelKind",
    "NoValidCorruption",
    "RankResult",
    "REFERENCE_PRESETS",
    "RelationType",
    "SceneAnnotation",
    "SceneKGError",
    "ScoreTable",
    "SplitSet",
    "SyntheticWorldSpec",
    "TrainConfig",
    "TrainingError",
    "Triple",
    "anomaly_score",
    "apply_class_whitelist",
    "apply_frequency_filter",
    "build_score_table",
    "corrupt_triple",
    "detect",
    "evaluate",
    "evaluate_topk",
    "generate_out_of_scene",
    "generate_synthetic_world",
    "generate_unique_out_of_scene",
    "grid_search",
    "household_schema",
    "ingest_annotations",
    "load_checkpoint",
    "load_graph",
    "merge_external_triples",
    "object_score",
    "predict_scenes",
    "rank_triple",
    "restrict_to_vocabulary",
    "save_checkpoint",
    "save_graph",
    "scene_score",
    "score_triple",
    "split_annotations",
    "sweep",
    "train",
]
