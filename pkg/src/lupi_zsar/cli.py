"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .benchmark import load_inputs, run_benchmark
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_classes
from .embeddings import (
    ObjectAggregationConfig,
    aggregate_objects,
    embed_class_set,
    embed_objects,
    load_detections,
    load_embedding_table,
)
from .errors import ConfigError, ZSARError
from .model import MODES, ModelConfig, forward_train, init_params
from .fusion import FUSION_MODES
from .splits import default_seen_count, generate_splits, save_splits
from .synth import SynthConfig, synth_generate, write_synth
from .training import RunConfig, evaluate, train

log = logging.getLogger("lupi_zsar")

# flag -> RunConfig field
_RUN_FLAGS = {
    "embeddings": str, "classes": str, "features": str, "detections": str, "out": str,
    "epochs": int, "batch_size": int, "base_lr": float, "mode": str, "fusion": str,
    "n_tokens": int, "key_dim": int, "dtype": str, "frames_per_clip": int, "top_k": int, "top_m": int,
    "seen_count": int, "n_splits": int, "seed": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with run settings; explicit flags override it")
    for name, typ in _RUN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        kwargs = {"type": typ, "default": None}
        if name == "mode":
            kwargs["choices"] = MODES
        elif name == "fusion":
            kwargs["choices"] = FUSION_MODES
        p.add_argument(flag, **kwargs)
    p.add_argument("--hidden-dims", type=_int_list, default=None, help="e.g. 512,512,512")


def _run_config(args) -> RunConfig:
    base = RunConfig.from_file(args.config).to_dict() if args.config else {}
    for name in [*_RUN_FLAGS, "hidden_dims"]:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return RunConfig.from_dict(base)


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _split_for(cfg: RunConfig, class_ids, index: int):
    seen_count = cfg.seen_count or default_seen_count(len(class_ids))
    splits = generate_splits(class_ids, seen_count, max(cfg.n_splits, index + 1), cfg.seed)
    return splits[index]


def cmd_train(args):
    cfg = _run_config(args)
    data, table = load_inputs(cfg)
    split = _split_for(cfg, data.class_list, args.split_index)
    result = train(cfg, data, split, table)
    out = Path(cfg.out or "run")
    save_checkpoint(result.params, out / "checkpoint")
    _emit({"split_index": args.split_index, "split": split.to_dict(), "trace": result.trace}, str(out / "train.json"))
    last = result.trace[-1]
    print(f"trained split {args.split_index}: loss={last['loss']:.6f} -> {out / 'checkpoint'}")


def cmd_evaluate(args):
    params = load_checkpoint(args.checkpoint)
    cfg = _run_config(args)
    cfg = RunConfig.from_dict({**cfg.to_dict(), "mode": params.config.mode, "fusion": params.config.fusion,
                               "n_tokens": params.config.n_tokens, "hidden_dims": params.config.hidden_dims})
    data, table = load_inputs(cfg, need_detections=False)
    split = _split_for(cfg, data.class_list, args.split_index)
    semantics = embed_class_set(table, data.classes)
    top1, top5 = evaluate(params, data, split, semantics)
    _emit({"split_index": args.split_index, "top1": top1, "top5": top5}, args.report)


def cmd_benchmark(args):
    cfg = _run_config(args)
    out = Path(cfg.out or "benchmark")
    report = run_benchmark(cfg, checkpoint_dir=out / "checkpoints" if args.save_checkpoints else None)
    paths = report.write(out)
    print(report.table())
    print(f"report: {paths['report']}")


def cmd_splits(args):
    classes = load_classes(args.classes)
    ids = [c for c, _ in classes]
    splits = generate_splits(ids, args.seen_count or default_seen_count(len(ids)), args.n_splits, args.seed)
    if args.out:
        save_splits(splits, args.out)
    else:
        _emit([s.to_dict() for s in splits], None)


def cmd_aggregate(args):
    records = load_detections(args.detections)
    class_ids = [c for c, _ in load_classes(args.classes)] if args.classes else None
    if class_ids is not None:
        present = {r.class_id for r in records}
        class_ids = [c for c in class_ids if c in present] if args.skip_missing else class_ids
    cfg = ObjectAggregationConfig(args.frames_per_clip, args.top_k, args.top_m)
    _emit(aggregate_objects(records, cfg, class_ids), args.out)


def cmd_embed_classes(args):
    table = load_embedding_table(args.embeddings)
    sem = embed_class_set(table, load_classes(args.classes))
    lines = ["class_id," + ",".join(f"v{i}" for i in range(sem.dim))]
    for cid, row in zip(sem.class_ids, sem.vectors):
        lines.append(cid + "," + ",".join(repr(float(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def gradcheck_model(mode="full", fusion="cross_attention", backbone_dim=16, hidden_dims=(32, 32, 32),
                    n_tokens=10, batch=4, seed=0, eps=1e-5, max_components=100) -> ad.GradientReport:
    """Finite-difference check of the joint loss on a synthetic batch, one clip per class."""
    synth = synth_generate(SynthConfig(n_classes=batch, per_class=1, backbone_dim=backbone_dim, seed=seed))
    data = synth.dataset
    semantics = embed_class_set(synth.table, data.classes)
    pi = embed_objects(synth.table, aggregate_objects(data.detections, class_ids=data.class_list))
    config = ModelConfig(backbone_dim=backbone_dim, hidden_dims=hidden_dims, n_tokens=n_tokens, mode=mode,
                         fusion=fusion)
    params = init_params(config, seed)
    ids = list(data.class_ids)
    closure = lambda: forward_train(params, data.X, ids, semantics, pi).total  # noqa: E731
    return ad.check_gradients(closure, params.parameters(), eps=eps, max_components=max_components,
                              rng=np.random.default_rng(seed))


def cmd_gradcheck(args):
    report = gradcheck_model(args.mode, args.fusion, args.backbone_dim, args.hidden_dims, args.n_tokens,
                             args.batch, args.seed, args.eps, args.max_components)
    worst = report.max_error
    _emit({"max_relative_error": worst, "per_parameter": report.errors, "skipped_at_kinks": report.skipped,
           "tolerance": args.tol}, None)
    if worst > args.tol:
        log.error("gradient check failed: %.3g > %.3g", worst, args.tol)
        return 3
    return 0


def cmd_synth(args):
    cfg = SynthConfig(n_classes=args.n_classes, per_class=args.per_class, backbone_dim=args.backbone_dim,
                      noise_sigma=args.noise_sigma, object_vocab_size=args.object_vocab_size,
                      objects_per_class=args.objects_per_class, seed=args.seed)
    paths = write_synth(synth_generate(cfg), args.out)
    for k, v in paths.items():
        print(f"{k}: {v}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lupi-zsar", description="Zero-shot action recognition with privileged object semantics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one split and write a checkpoint")
    _add_run_flags(p)
    p.add_argument("--split-index", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="top-1/top-5 of a checkpoint on one split")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split-index", type=int, default=0)
    p.add_argument("--report", help="write the result JSON here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="train and evaluate over random splits")
    _add_run_flags(p)
    p.add_argument("--save-checkpoints", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("splits", help="generate seeded seen/unseen splits")
    p.add_argument("--classes", required=True)
    p.add_argument("--seen-count", type=int)
    p.add_argument("--n-splits", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_splits)

    p = sub.add_parser("aggregate-objects", help="per-class top-m objects from clip detections")
    p.add_argument("--detections", required=True)
    p.add_argument("--classes", help="restrict to and require these classes")
    p.add_argument("--skip-missing", action="store_true", help="drop listed classes without detections")
    p.add_argument("--frames-per-clip", type=int, default=8)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--top-m", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("embed-classes", help="class name embeddings as CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed_classes)

    p = sub.add_parser("gradcheck", help="finite-difference check of the joint loss")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--fusion", choices=FUSION_MODES, default="cross_attention")
    p.add_argument("--backbone-dim", type=int, default=16)
    p.add_argument("--hidden-dims", type=_int_list, default=(32, 32, 32))
    p.add_argument("--n-tokens", type=int, default=10)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--max-components", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--backbone-dim", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--object-vocab-size", type=int, default=12)
    p.add_argument("--objects-per-class", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except ZSARError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        # stray I/O or parse problems on user-supplied inputs
        log.error("%s", exc)
        return ConfigError.exit_code if isinstance(exc, ValueError) else 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
