"""Multi-split benchmark: train and evaluate per split, aggregate mean and sample std."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import save_checkpoint
from .data import Dataset, load_classes, load_features
from .embeddings import WordEmbeddingTable, load_detections, load_embedding_table
from .errors import ZSARError
from .splits import default_seen_count, generate_splits
from .training import RunConfig, evaluate, split_semantics, train

log = logging.getLogger(__name__)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; the std of a single value is 0."""
    values = [float(v) for v in values]
    if len(values) == 1:
        warnings.warn("single split: standard deviation reported as 0", stacklevel=2)
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


def config_fingerprint(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.fingerprint_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    splits: list[dict]
    top1_mean: float
    top1_std: float
    top5_mean: float
    top5_std: float
    fingerprint: str
    config: dict
    timings: dict = field(default_factory=dict)

    @classmethod
    def from_splits(cls, rows: list[dict], cfg: RunConfig, timings=None) -> "EvalReport":
        t1m, t1s = mean_std([r["top1"] for r in rows])
        t5m, t5s = mean_std([r["top5"] for r in rows])
        return cls(rows, t1m, t1s, t5m, t5s, config_fingerprint(cfg), cfg.fingerprint_dict(), timings or {})

    def to_dict(self) -> dict:
        """Everything except wall-clock timings, which are kept separately."""
        return {
            "fingerprint": self.fingerprint,
            "config": self.config,
            "splits": self.splits,
            "aggregate": {
                "top1_mean": self.top1_mean, "top1_std": self.top1_std,
                "top5_mean": self.top5_mean, "top5_std": self.top5_std,
                "n_splits": len(self.splits),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'split':>5}  {'top1':>7}  {'top5':>7}"]
        for r in self.splits:
            lines.append(f"{r['index']:>5}  {100 * r['top1']:7.2f}  {100 * r['top5']:7.2f}")
        lines.append(f"{'mean':>5}  {100 * self.top1_mean:7.2f}  {100 * self.top5_mean:7.2f}")
        lines.append(f"{'std':>5}  {100 * self.top1_std:7.2f}  {100 * self.top5_std:7.2f}")
        lines.append(f"top-1 {100 * self.top1_mean:.1f} ± {100 * self.top1_std:.1f}   "
                     f"top-5 {100 * self.top5_mean:.1f} ± {100 * self.top5_std:.1f}")
        return "\n".join(lines)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.json", "table": out / "report.csv", "timings": out / "timings.json"}
        paths["report"].write_text(self.to_json(), encoding="utf-8")
        with open(paths["table"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "seed", "n_test", "top1", "top5"])
            for r in self.splits:
                w.writerow([r["index"], r["seed"], r["n_test"], repr(r["top1"]), repr(r["top5"])])
            w.writerow(["mean", "", "", repr(self.top1_mean), repr(self.top5_mean)])
            w.writerow(["std", "", "", repr(self.top1_std), repr(self.top5_std)])
        paths["timings"].write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def load_inputs(cfg: RunConfig, need_detections: bool | None = None) -> tuple[Dataset, WordEmbeddingTable]:
    need = cfg.mode != "baseline" if need_detections is None else need_detections
    cfg.check_paths("embeddings", "classes", "features", *(["detections"] if need else []))
    table = load_embedding_table(cfg.embeddings)
    classes = load_classes(cfg.classes)
    detections = load_detections(cfg.detections) if cfg.detections else None
    return load_features(cfg.features, classes, detections), table


def run_benchmark(cfg: RunConfig, data: Dataset | None = None, table: WordEmbeddingTable | None = None,
                  checkpoint_dir=None) -> EvalReport:
    """Train and evaluate on ``cfg.n_splits`` seeded splits.

    Inputs are read from the paths in ``cfg`` unless ``data`` and ``table``
    are given. With ``checkpoint_dir`` each split's final parameters are
    saved under ``split_<i>``.
    """
    if data is None or table is None:
        data, table = load_inputs(cfg)
    seen_count = cfg.seen_count or default_seen_count(len(data.classes))
    splits = generate_splits(data.class_list, seen_count, cfg.n_splits, cfg.seed)
    rows, timings = [], {"splits": []}
    start = time.perf_counter()
    for i, split in enumerate(splits):
        t0 = time.perf_counter()
        try:
            semantics, pi = split_semantics(cfg, data, table, split)
            result = train(cfg, data, split, table, semantics, pi)
            top1, top5 = evaluate(result.params, data, split, semantics)
        except ZSARError as exc:
            exc.args = (f"split {i}: {exc}",)
            raise
        if checkpoint_dir is not None:
            save_checkpoint(result.params, Path(checkpoint_dir) / f"split_{i:02d}")
        n_test = int(data.mask(split.unseen).sum())
        rows.append({"index": i, "seed": split.seed, "n_test": n_test, "top1": top1, "top5": top5,
                     "final_loss": result.trace[-1]["loss"] if result.trace else None})
        timings["splits"].append(time.perf_counter() - t0)
        log.info("split %d: top1=%.4f top5=%.4f", i, top1, top5)
    timings["total"] = time.perf_counter() - start
    return EvalReport.from_splits(rows, cfg, timings)
