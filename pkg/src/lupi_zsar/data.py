"""Dataset containers and the delimited-text formats for classes and backbone features."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import DetectionRecord
from .errors import DataError


@dataclass(frozen=True)
class BackboneFeature:
    video_id: str
    class_id: str
    values: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Precomputed backbone features for every clip, with class names and optional detections."""

    classes: tuple[tuple[str, str], ...]
    video_ids: tuple[str, ...]
    class_ids: np.ndarray
    X: np.ndarray
    detections: tuple[DetectionRecord, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple((str(c), str(n)) for c, n in self.classes))
        ids = [c for c, _ in self.classes]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate class ids in class list")
        X = np.asarray(self.X, dtype=np.float64)
        labels = np.asarray(self.class_ids, dtype=object)
        if X.ndim != 2 or X.shape[0] != len(labels) or len(self.video_ids) != len(labels):
            raise DataError(f"inconsistent dataset sizes: X{X.shape}, {len(labels)} labels, {len(self.video_ids)} ids")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite backbone feature values")
        unknown = sorted(set(labels) - set(ids))
        if unknown:
            raise DataError(f"features reference unknown classes {unknown}")
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))
            bad = sorted({r.class_id for r in self.detections} - set(ids))
            if bad:
                raise DataError(f"detections reference unknown classes {bad}")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "class_ids", labels)
        object.__setattr__(self, "video_ids", tuple(self.video_ids))

    @property
    def backbone_dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_list(self) -> list[str]:
        return [c for c, _ in self.classes]

    def __len__(self):
        return len(self.video_ids)

    @property
    def features(self) -> list[BackboneFeature]:
        return [BackboneFeature(v, c, x) for v, c, x in zip(self.video_ids, self.class_ids, self.X)]

    def mask(self, class_ids: Iterable[str]) -> np.ndarray:
        wanted = set(class_ids)
        return np.array([c in wanted for c in self.class_ids], dtype=bool)

    def detections_for(self, class_ids: Iterable[str]) -> list[DetectionRecord]:
        wanted = set(class_ids)
        return [r for r in (self.detections or ()) if r.class_id in wanted]


def load_classes(path) -> list[tuple[str, str]]:
    """``class_id,name`` rows under that header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["class_id", "name"]:
        raise DataError(f"{path}: expected header 'class_id,name'")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip():
            raise DataError(f"{path}: line {lineno}: expected 'class_id,name'")
        out.append((row[0].strip(), row[1].strip()))
    if not out:
        raise DataError(f"{path}: empty class list")
    return out


def save_classes(classes: Sequence[tuple[str, str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "name"])
        w.writerows(classes)


def read_feature_file(path) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read features ({exc})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty feature file")
        dim = len(header) - 2
        expected = ["video_id", "class_id"] + [f"f{i}" for i in range(dim)]
        if dim < 1 or header != expected:
            raise DataError(f"{path}: line 1: header must be 'video_id,class_id,f0,...,f{{D-1}}'")
        vids, cids, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DataError(f"{path}: line {lineno}: ragged row, expected {dim} features, found {len(row) - 2}")
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: non-numeric feature ({exc})") from exc
            vids.append(row[0])
            cids.append(row[1])
    if not rows:
        raise DataError(f"{path}: empty dataset")
    return vids, cids, np.array(rows, dtype=np.float64)


def load_features(path, classes: Sequence[tuple[str, str]], detections=None) -> Dataset:
    vids, cids, X = read_feature_file(path)
    known = {c for c, _ in classes}
    for i, c in enumerate(cids):
        if c not in known:
            raise DataError(f"{path}: line {i + 2}: unknown class id {c!r}")
    return Dataset(tuple(classes), tuple(vids), np.array(cids, dtype=object), X, detections)


def save_features(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "class_id"] + [f"f{i}" for i in range(data.backbone_dim)])
        for vid, cid, x in zip(data.video_ids, data.class_ids, data.X):
            w.writerow([vid, cid] + [repr(float(v)) for v in x])
