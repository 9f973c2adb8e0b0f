"""Run configuration, the mini-batch training loop and top-1/top-5 evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .embeddings import (
    ClassSemantics,
    ObjectAggregationConfig,
    ObjectSemantics,
    WordEmbeddingTable,
    aggregate_objects,
    embed_class_set,
    embed_objects,
)
from .data import Dataset
from .errors import ConfigError, DataError, NumericalError
from .model import ModelConfig, ModelParams, forward_test, forward_train, init_params, rank_classes
from .splits import Split

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    embeddings: str | None = None
    classes: str | None = None
    features: str | None = None
    detections: str | None = None
    out: str | None = None

    epochs: int = 10
    batch_size: int = 16
    base_lr: float = 1e-4
    mode: str = "full"
    fusion: str = "cross_attention"
    n_tokens: int = 10
    key_dim: int | None = None
    hidden_dims: tuple[int, ...] = (512, 512, 512)
    dtype: str = "float64"

    frames_per_clip: int = 8
    top_k: int = 20
    top_m: int = 5

    seen_count: int | None = None
    n_splits: int = 30
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        for name in ("epochs", "batch_size", "n_tokens", "top_k", "top_m", "n_splits", "frames_per_clip"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be positive")
        # validates mode / fusion / dtype / token count
        self.model_config(300)

    def model_config(self, backbone_dim: int) -> ModelConfig:
        return ModelConfig(backbone_dim=backbone_dim, hidden_dims=self.hidden_dims, n_tokens=self.n_tokens,
                           key_dim=self.key_dim, mode=self.mode, fusion=self.fusion, dtype=self.dtype)

    @property
    def aggregation(self) -> ObjectAggregationConfig:
        return ObjectAggregationConfig(self.frames_per_clip, self.top_k, self.top_m)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from exc

    def fingerprint_dict(self) -> dict:
        """Settings that determine results (paths and output location excluded)."""
        d = self.to_dict()
        for k in ("embeddings", "classes", "features", "detections", "out"):
            d.pop(k)
        return d

    def check_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required path '{name}'")
            if not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")


class TrainResult(NamedTuple):
    params: ModelParams
    trace: list[dict]


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def fit_model(config: ModelConfig, X: np.ndarray, y: Sequence[str], semantics: ClassSemantics,
              pi: ClassSemantics | None, *, epochs: int = 10, batch_size: int = 16, base_lr: float = 1e-4,
              seed: int = 0, params: ModelParams | None = None) -> TrainResult:
    """Adam on shuffled mini-batches; the last partial batch is kept.

    The learning rate follows :func:`autodiff.lr_schedule` per epoch and the
    shuffle stream advances once per epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    if len(X) == 0:
        raise DataError("no training samples")
    if config.mode != "baseline" and pi is None:
        raise DataError(f"mode {config.mode!r} needs object semantics for the seen classes")
    if params is None:
        params = init_params(config, seed)
    if config.mode == "pi_train_only":
        present = set(y)
        params.buffers["object_surrogate"] = pi.rows([c for c in pi.class_ids if c in present]).mean(axis=0)
    shuffle_rng = np.random.default_rng([seed, 1])
    state = ad.AdamState(base_lr=base_lr)
    plist = params.parameters()
    trace = []
    for epoch in range(epochs):
        lr = ad.lr_schedule(base_lr, epoch)
        order = shuffle_rng.permutation(len(X))
        sums = {"loss": 0.0, "action": 0.0, "hallucinate": 0.0}
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            losses = forward_train(params, X[idx], list(y[idx]), semantics, pi)
            ad.backward(losses.total)
            ad.adam_step(plist, state, lr)
            sums["loss"] += losses.total.item() * len(idx)
            sums["action"] += losses.action.item() * len(idx)
            if losses.hallucinate is not None:
                sums["hallucinate"] += losses.hallucinate.item() * len(idx)
        row = {"epoch": epoch, "lr": lr, **{k: v / len(X) for k, v in sums.items()}}
        if losses.hallucinate is None:
            row["hallucinate"] = None
        trace.append(row)
        log.debug("epoch %d lr=%.3g loss=%.6f", epoch, lr, row["loss"])
    params.epoch = epochs
    return TrainResult(params, trace)


def dataset_losses(params: ModelParams, X, y, semantics, pi=None) -> dict:
    losses = forward_train(params, X, list(y), semantics, pi)
    return {"loss": losses.total.item(), "action": losses.action.item(),
            "hallucinate": None if losses.hallucinate is None else losses.hallucinate.item()}


def split_semantics(cfg: RunConfig, data: Dataset, table: WordEmbeddingTable,
                    split: Split) -> tuple[ClassSemantics, ObjectSemantics | None]:
    """Class embeddings for all classes and object semantics for the seen ones."""
    semantics = embed_class_set(table, data.classes)
    if cfg.mode == "baseline":
        return semantics, None
    if data.detections is None:
        raise DataError(f"mode {cfg.mode!r} requires object detections")
    lists = aggregate_objects(data.detections_for(split.seen), cfg.aggregation, class_ids=split.seen)
    return semantics, embed_objects(table, lists)


def train(cfg: RunConfig, data: Dataset, split: Split, table: WordEmbeddingTable,
          semantics: ClassSemantics | None = None, pi: ObjectSemantics | None = None) -> TrainResult:
    if not split.seen:
        raise DataError("empty seen-class set")
    if semantics is None:
        semantics, pi = split_semantics(cfg, data, table, split)
    mask = data.mask(split.seen)
    missing = sorted(set(split.seen) - set(data.class_ids[mask]))
    if missing:
        raise DataError(f"seen classes without samples: {missing}")
    seed = derive_seed(cfg.seed, split.seed)
    return fit_model(cfg.model_config(data.backbone_dim), data.X[mask], data.class_ids[mask],
                     semantics, pi, epochs=cfg.epochs, batch_size=cfg.batch_size, base_lr=cfg.base_lr, seed=seed)


def evaluate(params: ModelParams, data: Dataset, split: Split, semantics: ClassSemantics) -> tuple[float, float]:
    """Top-1 and top-5 accuracy on unseen-class clips against unseen-class embeddings only."""
    unseen = semantics.subset(split.unseen)
    mask = data.mask(split.unseen)
    if not mask.any():
        raise DataError("no samples from unseen classes")
    queries = forward_test(params, data.X[mask])
    if not np.all(np.isfinite(queries)):
        raise NumericalError("non-finite test embeddings")
    truth = np.array([unseen.class_ids.index(c) for c in data.class_ids[mask]])
    ranked = rank_classes(queries, unseen, min(5, len(unseen)))
    top1 = float(np.mean(ranked[:, 0] == truth))
    top5 = float(np.mean((ranked == truth[:, None]).any(axis=1)))
    return top1, top5
