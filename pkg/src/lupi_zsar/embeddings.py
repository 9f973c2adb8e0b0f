"""Word-embedding tables and the class / object semantic vectors built from them."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    EmbeddingFormatError,
    EmptyLabelError,
    MissingPIError,
    UnresolvablePhraseError,
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WordEmbeddingTable:
    dim: int
    entries: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise EmbeddingFormatError(f"embedding dim must be positive, got {self.dim}")
        for tok, vec in self.entries.items():
            if not tok:
                raise EmbeddingFormatError("empty token")
            if vec.shape != (self.dim,):
                raise EmbeddingFormatError(f"token {tok!r}: expected {self.dim} components, found {vec.size}")

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, token: str) -> np.ndarray:
        return self.entries[token]

    @classmethod
    def from_dict(cls, vectors: Mapping[str, Sequence[float]]) -> "WordEmbeddingTable":
        entries = {tok.lower(): _frozen(v) for tok, v in vectors.items()}
        dims = {v.size for v in entries.values()}
        if len(dims) != 1:
            raise EmbeddingFormatError(f"inconsistent vector widths {sorted(dims)}")
        return cls(dim=dims.pop(), entries=entries)


def load_embedding_table(path) -> WordEmbeddingTable:
    """Read a word2vec text-format file.

    Tokens are case-folded. An exact duplicate token is an error; when two
    distinct tokens fold to the same lowercase form the first one wins
    (word2vec files are frequency ordered).
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise EmbeddingFormatError(f"{path}: cannot read embedding table ({exc})") from exc

    with fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise EmbeddingFormatError(f"line 1: malformed header {header.strip()!r}, expected '<count> <dim>'")
        count, dim = int(parts[0]), int(parts[1])
        if dim == 0:
            raise EmbeddingFormatError("line 1: dim must be positive")

        entries: dict[str, np.ndarray] = {}
        raw_seen: set[str] = set()
        n_rows = 0
        for lineno, line in enumerate(fh, start=2):
            fields = line.rstrip("\n").split(" ")
            fields = [f for f in fields if f != ""]
            if not fields:
                continue
            token, values = fields[0], fields[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(f"line {lineno}: expected {dim} components, found {len(values)}")
            if token in raw_seen:
                raise EmbeddingFormatError(f"line {lineno}: duplicate token {token!r}")
            raw_seen.add(token)
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"line {lineno}: non-numeric component ({exc})") from exc
            n_rows += 1
            entries.setdefault(token.lower(), _frozen(vec))

    if n_rows != count:
        raise EmbeddingFormatError(f"header declares {count} entries, file has {n_rows}")
    return WordEmbeddingTable(dim=dim, entries=entries)


def save_embedding_table(table: WordEmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for tok, vec in table.entries.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])")
_SEPARATORS = re.compile(r"[\s_\-]+")


def tokenize_label(raw: str) -> list[str]:
    """Split a class or object name into lowercase tokens.

    >>> tokenize_label("ShootBall")
    ['shoot', 'ball']
    """
    if not any(ch.isalnum() for ch in raw):
        raise EmptyLabelError(f"label {raw!r} has no alphanumeric characters")
    return [t.lower() for t in _SEPARATORS.split(_CAMEL.sub(" ", raw)) if t]


def embed_phrase(table: WordEmbeddingTable, tokens: Sequence[str], context=None) -> np.ndarray:
    """Mean of the vectors of the tokens present in ``table``; absent tokens are skipped."""
    if not tokens:
        raise EmptyLabelError("cannot embed an empty token list")
    found = [table[t] for t in tokens if t in table]
    if not found:
        raise UnresolvablePhraseError(tokens, context)
    return np.mean(found, axis=0)


def _check_unique(ids: Sequence[str], what: str):
    dup = [k for k, n in Counter(ids).items() if n > 1]
    if dup:
        raise DataError(f"duplicate {what} ids: {dup}")


@dataclass(frozen=True)
class ClassSemantics:
    """Per-class semantic vectors, one row per class in ``class_ids`` order."""

    class_ids: tuple[str, ...]
    vectors: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        _check_unique(self.class_ids, "class")
        vecs = np.array(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.class_ids):
            raise DataError(f"expected {len(self.class_ids)} rows, got shape {vecs.shape}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.class_ids)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.class_ids)

    def __contains__(self, class_id):
        return class_id in self._index

    def row(self, class_id: str) -> np.ndarray:
        try:
            return self.vectors[self._index[class_id]]
        except KeyError:
            raise DataError(f"no semantic vector for class {class_id!r}") from None

    def rows(self, class_ids: Iterable[str]) -> np.ndarray:
        return np.stack([self.row(c) for c in class_ids])

    def subset(self, class_ids: Iterable[str]) -> "ClassSemantics":
        ids = tuple(class_ids)
        return ClassSemantics(ids, self.rows(ids) if ids else np.zeros((0, self.dim)))


def embed_class_set(table: WordEmbeddingTable, class_names: Sequence[tuple[str, str]]) -> ClassSemantics:
    ids = [cid for cid, _ in class_names]
    _check_unique(ids, "class")
    rows = [embed_phrase(table, tokenize_label(name), context=f"class {cid!r}") for cid, name in class_names]
    return ClassSemantics(tuple(ids), np.array(rows).reshape(len(ids), table.dim))


@dataclass(frozen=True)
class ObjectAggregationConfig:
    frames_per_clip: int = 8
    top_k_per_clip: int = 20
    top_m_per_class: int = 5

    def __post_init__(self):
        for name in ("frames_per_clip", "top_k_per_clip", "top_m_per_class"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    class_id: str
    labels: tuple[tuple[str, float], ...]

    def __post_init__(self):
        labels = tuple((str(n), float(p)) for n, p in self.labels)
        if not labels:
            raise DataError(f"detection record {self.video_id!r} has no labels")
        for name, prob in labels:
            if not 0.0 <= prob <= 1.0:
                raise DataError(f"detection record {self.video_id!r}: probability {prob} for {name!r} outside [0, 1]")
        object.__setattr__(self, "labels", labels)

    def top_k(self, k: int) -> list[str]:
        ranked = sorted(self.labels, key=lambda np_: (-np_[1], np_[0]))
        return [n for n, _ in ranked[:k]]


def aggregate_objects(detections: Iterable[DetectionRecord], cfg: ObjectAggregationConfig = ObjectAggregationConfig(),
                      class_ids: Sequence[str] | None = None) -> dict[str, list[str]]:
    """Most frequent object names per class over each clip's top-k labels.

    A name counts once per clip in which it survives the top-k cut. Ties on
    probability and on frequency are broken by name. With ``class_ids``,
    records must belong to that set and every listed class needs records.
    """
    allowed = None if class_ids is None else set(class_ids)
    counts: dict[str, Counter] = {}
    for rec in detections:
        if allowed is not None and rec.class_id not in allowed:
            raise DataError(f"detection {rec.video_id!r} belongs to class {rec.class_id!r} outside the seen set")
        counts.setdefault(rec.class_id, Counter()).update(set(rec.top_k(cfg.top_k_per_clip)))
    order = list(class_ids) if class_ids is not None else sorted(counts)
    out = {}
    for cid in order:
        if cid not in counts:
            raise MissingPIError(f"class {cid!r} has no detection records")
        ranked = sorted(counts[cid].items(), key=lambda kv: (-kv[1], kv[0]))
        out[cid] = [name for name, _ in ranked[: cfg.top_m_per_class]]
    return out


@dataclass(frozen=True)
class ObjectSemantics(ClassSemantics):
    object_lists: tuple[tuple[str, ...], ...] = ()


def embed_objects(table: WordEmbeddingTable, object_lists: Mapping[str, Sequence[str]]) -> ObjectSemantics:
    """Per class, the mean embedding of its resolvable object names."""
    ids, rows, lists = [], [], []
    for cid, names in object_lists.items():
        if not names:
            raise DataError(f"class {cid!r}: empty object list")
        vecs = []
        for name in names:
            try:
                vecs.append(embed_phrase(table, tokenize_label(name)))
            except (UnresolvablePhraseError, EmptyLabelError):
                continue
        if not vecs:
            raise UnresolvablePhraseError(list(names), context=f"objects of class {cid!r}")
        ids.append(cid)
        rows.append(np.mean(vecs, axis=0))
        lists.append(tuple(names))
    return ObjectSemantics(tuple(ids), np.array(rows).reshape(len(ids), table.dim), object_lists=tuple(lists))


def load_detections(path) -> list[DetectionRecord]:
    """Read JSON-lines detections: ``{"video_id", "class_id", "labels": [{"name", "prob"}]}``."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                labels = [(lab["name"], lab["prob"]) for lab in obj["labels"]]
                records.append(DetectionRecord(str(obj["video_id"]), str(obj["class_id"]), tuple(labels)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: malformed detection record ({exc})") from exc
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return records


def save_detections(records: Iterable[DetectionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"video_id": rec.video_id, "class_id": rec.class_id,
                   "labels": [{"name": n, "prob": p} for n, p in rec.labels]}
            fh.write(json.dumps(obj) + "\n")
