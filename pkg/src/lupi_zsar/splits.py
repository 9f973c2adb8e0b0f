"""Random seen/unseen class partitions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Split:
    seed: int
    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise DataError("seen and unseen classes overlap")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "seen": list(self.seen), "unseen": list(self.unseen)}

    @classmethod
    def from_dict(cls, d) -> "Split":
        return cls(int(d["seed"]), tuple(d["seen"]), tuple(d["unseen"]))


def default_seen_count(n_classes: int) -> int:
    """Half the classes, rounding up: 8/8, 26/25, 51/50."""
    return (n_classes + 1) // 2


def generate_splits(class_ids: Sequence[str], seen_count: int, n_splits: int = 30, seed: int = 0) -> list[Split]:
    """Independent seeded shuffles; each split keeps class-list order within its two halves.

    Every split draws its own 63-bit seed from the master stream, so a
    split can be regenerated from its recorded seed alone.
    """
    class_ids = list(class_ids)
    if len(set(class_ids)) != len(class_ids):
        raise DataError("duplicate class ids")
    if not 0 < seen_count < len(class_ids):
        raise ConfigError(f"seen_count must be in (0, {len(class_ids)}), got {seen_count}")
    if n_splits < 1:
        raise ConfigError("n_splits must be positive")
    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2**63 - 1, size=n_splits, dtype=np.int64)
    return [split_from_seed(class_ids, seen_count, int(s)) for s in seeds]


def split_from_seed(class_ids: Sequence[str], seen_count: int, split_seed: int) -> Split:
    perm = np.random.default_rng(split_seed).permutation(len(class_ids))
    seen_idx = set(perm[:seen_count].tolist())
    seen = tuple(c for i, c in enumerate(class_ids) if i in seen_idx)
    unseen = tuple(c for i, c in enumerate(class_ids) if i not in seen_idx)
    return Split(split_seed, seen, unseen)


def save_splits(splits: Sequence[Split], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([s.to_dict() for s in splits], fh, indent=2)
        fh.write("\n")


def load_splits(path) -> list[Split]:
    with open(path, encoding="utf-8") as fh:
        return [Split.from_dict(d) for d in json.load(fh)]
