"""Synthetic zero-shot corpora with planted class and object semantics.

Class names are short phrases over a small shared vocabulary, so unseen
class embeddings are averages of words also seen in training. Backbone
features are a fixed random linear image of ``[f_y ; f_o]`` plus Gaussian
noise, and clip detections rank each class's planted objects above random
distractors.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, save_classes, save_features
from .embeddings import DetectionRecord, WordEmbeddingTable, save_detections, save_embedding_table
from .errors import ConfigError

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 20
    per_class: int = 30
    backbone_dim: int = 64
    noise_sigma: float = 0.1
    object_vocab_size: int = 12
    objects_per_class: int = 3
    name_vocab_size: int | None = None
    words_per_name: int = 2
    distractors_per_clip: int = 4
    embed_dim: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "per_class", "backbone_dim", "object_vocab_size", "objects_per_class",
                     "words_per_name", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.objects_per_class > self.object_vocab_size:
            raise ConfigError("objects_per_class exceeds object_vocab_size")
        if math.comb(self.name_vocab, self.words_per_name) < self.n_classes:
            raise ConfigError("name vocabulary too small for distinct class names")

    @property
    def name_vocab(self) -> int:
        if self.name_vocab_size is not None:
            return self.name_vocab_size
        n = self.words_per_name
        while math.comb(n, self.words_per_name) < self.n_classes:
            n += 1
        return n


@dataclass(frozen=True)
class SynthData:
    config: SynthConfig
    table: WordEmbeddingTable
    dataset: Dataset
    planted_objects: dict[str, list[str]]
    mixing: np.ndarray


def _pseudo_words(rng, n: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _unit(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def synth_generate(cfg: SynthConfig = SynthConfig()) -> SynthData:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    taken: set[str] = set()
    name_words = _pseudo_words(rng, cfg.name_vocab, taken)
    object_words = _pseudo_words(rng, cfg.object_vocab_size, taken)
    vocab = name_words + object_words
    vectors = _unit(rng, len(vocab), cfg.embed_dim)
    table = WordEmbeddingTable.from_dict(dict(zip(vocab, vectors)))

    combos = list(itertools.combinations(range(cfg.name_vocab), cfg.words_per_name))
    picked = rng.choice(len(combos), size=cfg.n_classes, replace=False)
    classes, f_y, f_o, planted = [], [], [], {}
    for i, ci in enumerate(picked):
        cid = f"c{i:03d}"
        words = [name_words[j] for j in combos[ci]]
        classes.append((cid, " ".join(words)))
        f_y.append(np.mean([table[w] for w in words], axis=0))
        objs = sorted(object_words[j] for j in rng.choice(cfg.object_vocab_size, cfg.objects_per_class, replace=False))
        planted[cid] = objs
        f_o.append(np.mean([table[o] for o in objs], axis=0))
    z = np.hstack([np.array(f_y), np.array(f_o)])

    mixing = rng.standard_normal((cfg.backbone_dim, 2 * cfg.embed_dim))
    vids, labels, rows, dets = [], [], [], []
    for c, (cid, _) in enumerate(classes):
        distractor_pool = [o for o in object_words if o not in planted[cid]]
        for k in range(cfg.per_class):
            vid = f"{cid}_v{k:03d}"
            x = mixing @ z[c]
            if cfg.noise_sigma > 0:
                x = x + cfg.noise_sigma * rng.standard_normal(cfg.backbone_dim)
            vids.append(vid)
            labels.append(cid)
            rows.append(x)
            clip = [(o, float(rng.uniform(0.6, 1.0))) for o in planted[cid]]
            # first clip is distractor-free so planted objects strictly lead the counts
            n_distract = 0 if k == 0 else min(cfg.distractors_per_clip, len(distractor_pool))
            if n_distract:
                for j in rng.choice(len(distractor_pool), n_distract, replace=False):
                    clip.append((distractor_pool[j], float(rng.uniform(0.0, 0.5))))
            dets.append(DetectionRecord(vid, cid, tuple(clip)))

    dataset = Dataset(tuple(classes), tuple(vids), np.array(labels, dtype=object), np.array(rows), tuple(dets))
    return SynthData(cfg, table, dataset, planted, mixing)


def write_synth(data: SynthData, out_dir) -> dict[str, str]:
    """Write the corpus as the four interchange files and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "embeddings": out / "embeddings.txt",
        "classes": out / "classes.csv",
        "features": out / "features.csv",
        "detections": out / "detections.jsonl",
    }
    save_embedding_table(data.table, paths["embeddings"])
    save_classes(data.dataset.classes, paths["classes"])
    save_features(data.dataset, paths["features"])
    save_detections(data.dataset.detections, paths["detections"])
    with open(out / "synth.json", "w", encoding="utf-8") as fh:
        json.dump({"config": asdict(data.config), "planted_objects": data.planted_objects}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
