"""scikit-learn style wrapper around the zero-shot model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embeddings import ClassSemantics
from .model import ModelConfig, forward_test, rank_classes
from .training import fit_model
from .validation import check_features, check_labels, check_semantics


class PrivilegedZeroShotClassifier(TransformerMixin, BaseEstimator):
    """Zero-shot action classifier trained with object semantics as privileged information.

    ``fit`` takes backbone features of seen-class clips, their class ids,
    the class name embeddings and (outside baseline mode) per-class object
    semantics. ``transform`` maps features into the semantic space, and
    ``predict`` matches them against whatever candidate classes are passed,
    normally the unseen ones.

    Parameters
    ----------
    mode : {"full", "pi_train_only", "baseline"}
    fusion : {"cross_attention", "add", "multiply", "concat"}
    n_tokens : int
        Number of tokens each 300-dim feature is split into for attention.
    key_dim : int or None
        Query/key width; defaults to the token width.
    hidden_dims : tuple of int
        Widths of the hallucinator's three hidden layers.
    epochs, batch_size, base_lr
        Adam schedule; the learning rate halves every five epochs.
    dtype : {"float64", "float32"}
    random_state : int
    """

    def __init__(self, mode="full", fusion="cross_attention", n_tokens=10, key_dim=None,
                 hidden_dims=(512, 512, 512), epochs=10, batch_size=16, base_lr=1e-4,
                 dtype="float64", random_state=0):
        self.mode = mode
        self.fusion = fusion
        self.n_tokens = n_tokens
        self.key_dim = key_dim
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y, class_semantics: ClassSemantics, object_semantics: ClassSemantics | None = None):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        seen = sorted(set(y))
        check_semantics(class_semantics, seen)
        if self.mode != "baseline":
            check_semantics(object_semantics, seen, "object semantics")
        config = ModelConfig(backbone_dim=X.shape[1], embed_dim=class_semantics.dim,
                             hidden_dims=tuple(self.hidden_dims), n_tokens=self.n_tokens, key_dim=self.key_dim,
                             mode=self.mode, fusion=self.fusion, dtype=self.dtype)
        result = fit_model(config, X, y, class_semantics, object_semantics, epochs=self.epochs,
                           batch_size=self.batch_size, base_lr=self.base_lr, seed=self.random_state)
        self.params_ = result.params
        self.loss_trace_ = result.trace
        self.classes_seen_ = np.array(seen, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Joint semantic-space embedding of each sample."""
        check_is_fitted(self, "params_")
        return forward_test(self.params_, check_features(X, self.n_features_in_))

    def rank(self, X, candidates: ClassSemantics, top_n: int | None = None) -> np.ndarray:
        check_semantics(candidates)
        idx = rank_classes(self.transform(X), candidates, top_n)
        return np.asarray(candidates.class_ids, dtype=object)[idx]

    def predict(self, X, candidates: ClassSemantics) -> np.ndarray:
        return self.rank(X, candidates, 1)[:, 0]

    def score(self, X, y, candidates: ClassSemantics) -> float:
        """Top-1 accuracy against ``candidates``."""
        y = check_labels(y, len(X))
        return float(np.mean(self.predict(X, candidates) == y))
