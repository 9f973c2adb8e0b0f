"""Zero-shot action recognition with object semantics as privileged information."""

from .embeddings import (
    ClassSemantics,
    DetectionRecord,
    ObjectAggregationConfig,
    ObjectSemantics,
    WordEmbeddingTable,
    aggregate_objects,
    embed_class_set,
    embed_objects,
    embed_phrase,
    load_embedding_table,
    tokenize_label,
)
from .estimator import PrivilegedZeroShotClassifier
from .model import ModelConfig, ModelParams, forward_test, forward_train, init_params, predict
from .training import RunConfig, evaluate, train
from .benchmark import EvalReport, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "ClassSemantics", "DetectionRecord", "ObjectAggregationConfig", "ObjectSemantics", "WordEmbeddingTable",
    "aggregate_objects", "embed_class_set", "embed_objects", "embed_phrase", "load_embedding_table",
    "tokenize_label", "PrivilegedZeroShotClassifier", "ModelConfig", "ModelParams", "forward_test",
    "forward_train", "init_params", "predict", "RunConfig", "evaluate", "train", "EvalReport", "run_benchmark",
]
