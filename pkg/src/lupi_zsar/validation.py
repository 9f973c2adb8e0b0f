"""Input checks shared by the estimator and the harness."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .embeddings import ClassSemantics
from .errors import DataError


def check_features(X, n_features: int | None = None) -> np.ndarray:
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"X has {X.shape[1]} features, the model expects {n_features}")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y, dtype=object).reshape(-1)
    if y.shape[0] != n_samples:
        raise DataError(f"got {y.shape[0]} labels for {n_samples} samples")
    return np.array([str(v) for v in y], dtype=object)


def check_semantics(semantics, class_ids=None, what="class semantics") -> ClassSemantics:
    if not isinstance(semantics, ClassSemantics):
        raise TypeError(f"{what} must be a ClassSemantics, got {type(semantics).__name__}")
    if class_ids is not None:
        missing = sorted(set(class_ids) - set(semantics.class_ids))
        if missing:
            raise DataError(f"{what} missing for classes {missing}")
    return semantics
