"""Acceptance checks, one test per criterion; each prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from lupi_zsar import autodiff as ad
from lupi_zsar.benchmark import run_benchmark
from lupi_zsar.cli import gradcheck_model
from lupi_zsar.embeddings import ClassSemantics, DetectionRecord, ObjectAggregationConfig, aggregate_objects
from lupi_zsar.fusion import AttentionParams, mutual_attention
from lupi_zsar.model import ModelConfig, forward_train, hallucinate, init_params, rank_classes
from lupi_zsar.synth import SynthConfig, synth_generate
from lupi_zsar.training import RunConfig

from oracles import attention_oracle, brute_force_aggregate, exhaustive_rank

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


# ------------------------------------------------------------------ 1


def test_criterion_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    worst, names, skipped = 0.0, set(), 0
    for fusion in ("cross_attention", "concat", "add", "multiply"):
        report = gradcheck_model("full", fusion, backbone_dim=512, hidden_dims=(512, 512, 512), batch=4, seed=3,
                                 eps=1e-5, max_components=100)
        worst = max(worst, report.max_error)
        names |= set(report.errors)
        skipped += sum(report.skipped.values())
        assert all(n > 0 for n in report.probed.values())
    elapsed = time.perf_counter() - t0
    groups = {"action.weight", "action.bias", "concat.proj", *(f"attn.{p}" for p in
              ("q_v", "k_v", "v_v", "q_o", "k_o", "v_o")), *(f"halluc.{i}.weight" for i in range(4))}
    ok = groups <= names and worst <= 1e-4 and elapsed < 60
    verdict(1, ok, f"max relative error {worst:.2e} over {len(names)} tensors "
                   f"({skipped} kink components resampled), {elapsed:.1f}s")


# ------------------------------------------------------------------ 2


def test_criterion_2_attention_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst, exact_single = 0.0, True
    names = ("q_v", "k_v", "v_v", "q_o", "k_o", "v_o")
    for i in range(1000):
        s = (1, 2, 5, 10)[i % 4]
        dim = 300 if i < 8 else s * int(rng.integers(1, 7))
        key_dim = None if rng.random() < 0.5 else int(rng.integers(1, 6))
        p = AttentionParams.init(rng, dim, s, key_dim)
        f_v, f_o = rng.standard_normal(dim) * rng.uniform(0.1, 3), rng.standard_normal(dim) * rng.uniform(0.1, 3)
        v_hat, o_hat = mutual_attention(f_v, f_o, p)
        W = {n: getattr(p, n).data.tolist() for n in names}
        ov, oo = attention_oracle(f_v.tolist(), f_o.tolist(), s, W)
        worst = max(worst, np.abs(v_hat.numpy()[0] - ov).max(), np.abs(o_hat.numpy()[0] - oo).max())
        if s == 1:
            exact_single &= np.array_equal(v_hat.numpy()[0], f_v @ p.v_v.data)
            exact_single &= np.array_equal(o_hat.numpy()[0], f_o @ p.v_o.data)
    verdict(2, worst <= 1e-10 and exact_single,
            f"1000 instances, max |diff| {worst:.1e}, S=1 equals value projection exactly: {exact_single}")


# ------------------------------------------------------------------ 3


def test_criterion_3_aggregation_oracle(verdict):
    rng = np.random.default_rng(7)
    grid = np.array([0.0, 0.1, 0.2, 0.5, 0.5, 0.8, 1.0])  # coarse grid forces probability ties
    mismatches, ties = 0, 0
    for _ in range(500):
        vocab = [f"obj{j}" for j in range(int(rng.integers(1, 15)))]
        records = []
        for c in range(int(rng.integers(1, 8))):
            for clip in range(int(rng.integers(1, 6))):
                n = int(rng.integers(1, len(vocab) + 1))
                names = rng.choice(vocab, n, replace=False)
                labels = [(str(nm), float(rng.choice(grid))) for nm in names]
                ties += len({pr for _, pr in labels}) < len(labels)
                records.append((f"class{c}", labels))
        k, m = int(rng.integers(1, 10)), int(rng.integers(1, 7))
        dets = [DetectionRecord(f"v{i}", c, tuple(lab)) for i, (c, lab) in enumerate(records)]
        got = aggregate_objects(dets, ObjectAggregationConfig(top_k_per_clip=k, top_m_per_class=m))
        mismatches += got != brute_force_aggregate(records, k, m)
    verdict(3, mismatches == 0 and ties > 0, f"500 detection sets, {mismatches} mismatches, {ties} clips with ties")


# ------------------------------------------------------------------ 4


def test_criterion_4_nearest_neighbour_oracle(verdict):
    rng = np.random.default_rng(11)
    mismatches, rescale_fail, tie_cases = 0, 0, 0
    for _ in range(1000):
        c, dim = int(rng.integers(1, 15)), int(rng.integers(2, 12))
        rows = rng.standard_normal((c, dim))
        if c > 2 and rng.random() < 0.3:
            rows[int(rng.integers(c))] = rows[0]  # duplicate row: an exact distance tie
            tie_cases += 1
        q = rng.standard_normal(dim)
        sem = ClassSemantics(tuple(f"k{i}" for i in range(c)), rows)
        ranked = list(rank_classes(q[None, :], sem)[0])
        mismatches += ranked != exhaustive_rank(q.tolist(), rows.tolist())
        # positive rescaling by powers of two is exact in floating point, so ties survive it
        pow2 = ClassSemantics(sem.class_ids, rows * 2.0 ** rng.integers(-8, 9, size=(c, 1)))
        rescale_fail += list(rank_classes(q[None, :] * 2.0 ** int(rng.integers(-8, 9)), pow2)[0]) != ranked
        # arbitrary positive factors, when no two distances are within rounding of each other
        d = np.sort(1 - rows @ q / (np.linalg.norm(rows, axis=1) * np.linalg.norm(q)))
        if c == 1 or np.diff(d).min() > 1e-9:
            scaled = ClassSemantics(sem.class_ids, rows * rng.uniform(0.01, 100, size=(c, 1)))
            rescale_fail += list(rank_classes(q[None, :] * rng.uniform(0.01, 100), scaled)[0]) != ranked
    verdict(4, mismatches == 0 and rescale_fail == 0,
            f"1000 instances ({tie_cases} with ties), {mismatches} scan mismatches, {rescale_fail} rescaling changes")


# ------------------------------------------------------------------ 5 and 7


SYNTH = SynthConfig(n_classes=20, per_class=30, backbone_dim=64, noise_sigma=0.1)


def synth_run_config(mode, fusion="cross_attention"):
    # lr 1e-2 instead of the 1e-4 default: 190 Adam steps per split are too few at 1e-4
    return RunConfig(mode=mode, fusion=fusion, epochs=10, base_lr=1e-2, seen_count=10, n_splits=5, seed=0)


@pytest.fixture(scope="module")
def synth_corpus():
    return synth_generate(SYNTH)


@pytest.fixture(scope="module")
def full_report(synth_corpus):
    t0 = time.perf_counter()
    with threadpool_limits(1):
        report = run_benchmark(synth_run_config("full"), synth_corpus.dataset, synth_corpus.table)
    return report, time.perf_counter() - t0


def test_criterion_5_synthetic_zero_shot(verdict, synth_corpus, full_report):
    full, t_full = full_report
    t0 = time.perf_counter()
    with threadpool_limits(1):
        base = run_benchmark(synth_run_config("baseline"), synth_corpus.dataset, synth_corpus.table)
    t_base = time.perf_counter() - t0
    ok = full.top1_mean >= 0.30 and full.top1_mean >= base.top1_mean - 0.02 and t_full < 300
    verdict(5, ok, f"full top-1 {full.top1_mean:.3f} (chance 0.10), baseline {base.top1_mean:.3f}, "
                   f"single-threaded runs {t_full:.1f}s (full), {t_base:.1f}s (baseline)")


def test_criterion_7_determinism(verdict, synth_corpus, full_report):
    again = run_benchmark(synth_run_config("full"), synth_corpus.dataset, synth_corpus.table)
    same = again.to_json().encode() == full_report[0].to_json().encode()
    verdict(7, same, "repeated run gives a byte-identical report" if same else "reports differ")


# ------------------------------------------------------------------ 6


def test_criterion_6_ablation_plumbing(verdict, synth_corpus, tmp_path):
    blobs, tops = {}, {}
    for fusion in ("cross_attention", "multiply", "concat", "add"):
        out = tmp_path / fusion
        report = run_benchmark(synth_run_config("full", fusion), synth_corpus.dataset, synth_corpus.table,
                               checkpoint_dir=out)
        tops[fusion] = report.top1_mean
        blobs[fusion] = (out / "split_00" / "params.bin").read_bytes()
    distinct = len(set(blobs.values())) == 4
    verdict(6, distinct, "four fusion modes benchmarked, distinct checkpoints; top-1 " +
            ", ".join(f"{k} {v:.3f}" for k, v in tops.items()))


# ------------------------------------------------------------------ 8


def test_criterion_8_loss_identity(verdict):
    rng = np.random.default_rng(8)
    zero_ok, worst_gap = True, 0.0
    for fusion in ("cross_attention", "add", "multiply", "concat"):
        for _ in range(5):
            # dyadic values keep every rigged sum and quotient exact
            f_y = rng.integers(-64, 65, 300) / 16.0
            f_o = 2.0 ** rng.integers(-3, 4, 300) if fusion == "multiply" else rng.integers(-64, 65, 300) / 16.0
            p = init_params(ModelConfig(backbone_dim=300, hidden_dims=(8, 8, 8), n_tokens=1, fusion=fusion), 0)
            p["action.weight"].data[...] = np.eye(300)
            if fusion == "cross_attention":  # one token: fused = f_v @ v_v + f_o @ v_o
                p["attn.v_v"].data[...] = np.eye(300)
                p["attn.v_o"].data[...] = 0.0
            elif fusion == "add":
                p["action.bias"].data[...] = -f_o
            elif fusion == "multiply":
                p["action.bias"].data[...] = f_y / f_o - f_y
            else:
                p["concat.proj"].data[...] = np.vstack([np.eye(300), np.zeros((300, 300))])
            for i in range(4):
                p[f"halluc.{i}.weight"].data[...] = 0.0
            p["halluc.3.bias"].data[...] = f_o
            pi, sem = ClassSemantics(("a",), f_o[None]), ClassSemantics(("a",), f_y[None])
            losses = forward_train(p, np.stack([f_y, f_y]), ["a", "a"], sem, pi)
            zero_ok &= losses.total.item() == 0.0 and losses.hallucinate.item() == 0.0

    for _ in range(50):
        p = init_params(ModelConfig(backbone_dim=12, hidden_dims=(6, 6, 6)), int(rng.integers(1000)))
        ids = ["a", "b", "c"]
        sem = ClassSemantics(tuple(ids), rng.standard_normal((3, 300)))
        pi = ClassSemantics(tuple(ids), rng.standard_normal((3, 300)))
        x = rng.standard_normal((4, 12))
        y = list(rng.choice(ids, 4))
        losses = forward_train(p, x, y, sem, pi)
        h_ref = np.mean(np.sum((hallucinate(p, x).numpy() - pi.rows(y)) ** 2, axis=1))
        worst_gap = max(worst_gap, abs(losses.total.item() - losses.action.item() - losses.hallucinate.item()),
                        abs(losses.hallucinate.item() - h_ref))
    verdict(8, zero_ok and worst_gap <= 1e-12,
            f"rigged instances reach L = 0: {zero_ok}; additivity gap {worst_gap:.1e}")


# ------------------------------------------------------------------ 9


def test_criterion_9_lr_schedule(verdict):
    expected = {0: 1e-4, 4: 1e-4, 5: 5e-5, 9: 5e-5, 10: 2.5e-5}
    got = {e: ad.lr_schedule(1e-4, e) for e in expected}
    verdict(9, got == expected, ", ".join(f"epoch {e}: {v:g}" for e, v in got.items()))
