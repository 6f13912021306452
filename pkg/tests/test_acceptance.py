"""Acceptance gate: one test per shipping criterion, one verdict line each.

Run as `pytest tests/test_acceptance.py -v -s`. The two retrieval criteria
share a module fixture that trains 3 seeds x 4 variants of the desk benchmark
(configs/desk.cfg); expect roughly twenty minutes on one CPU core. Everything
else finishes in seconds.
"""

import copy
import dataclasses
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from neuralign import autodiff as ad
from neuralign.autodiff import ParamStore
from neuralign.codebook import (
    COUNT_EPS,
    MODALITIES,
    CodebookConfig,
    commitment_loss,
    ema_update,
    ema_update_sequential,
    new_codebook,
    quantize,
    sufficient_stats,
)
from neuralign.config import load_config
from neuralign.encoders import (
    ModelConfig,
    attention_context,
    dilated_causal_conv,
    fmri_adapt_sequence,
    init_conv_stack_params,
    init_context_params,
    init_fmri_adapter_params,
    init_mlp_params,
    mlp2,
    multiscale_features,
    prediction_head,
)
from neuralign.evaluate import full_report
from neuralign.hrf import hrf_kernel
from neuralign.matching import (
    MatchConfig,
    hrf_operator,
    match_loss,
    structural_loss,
    temporal_loss,
)
from neuralign.ntcl import NtclConfig, direction_loss, ntcl_loss
from neuralign.synthdata import SynthConfig, generate_dataset
from neuralign.trainer import (
    TrainConfig,
    batch_for_step,
    dims_from_samples,
    init_state,
    load_checkpoint,
    run_training,
    save_checkpoint,
    total_loss,
    train_step,
)

DESK_CFG = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"

FD_TOL = 1e-4
ORACLE_TOL = 1e-10


def criterion(name: str, ok: bool, evidence: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {evidence}")
    assert ok, f"{name}: {evidence}"


# =====================================================================
# gradient integrity: every differentiable operation and the composed
# training objective pass finite-difference checks, rel err < 1e-4,
# >= 100 randomized instances, under 60 seconds
# =====================================================================


def test_gradient_integrity():
    start = time.monotonic()
    count = 0
    worst = 0.0

    def check(build, store):
        nonlocal count, worst
        worst = max(worst, ad.check_gradients(build, store))
        count += 1

    def store_with(rng, **shapes):
        store = ParamStore()
        for name, shape in shapes.items():
            store.add(name, rng.normal(size=shape))
        return store

    # elementwise binaries under broadcasting
    for round_seed in (0, 1):
        for i, op in enumerate((ad.add, ad.sub, ad.mul, ad.div)):
            for j, (sa, sb) in enumerate(
                [((3, 4), (3, 4)), ((3, 4), (4,)), ((2, 1, 3), (4, 3)), ((3,), ())]
            ):
                rng = np.random.default_rng(1000 * round_seed + 10 * i + j)
                store = ParamStore()
                store.add("a", rng.normal(size=sa))
                # keep divisors away from zero so central differences behave
                store.add("b", rng.uniform(0.6, 1.6, size=sb) * rng.choice([-1.0, 1.0], size=sb))
                check(lambda s=store, o=op: ad.reduce_sum(ad.square(o(s.leaf("a"), s.leaf("b")))), store)

    # matmul, plain and batched
    for seed, (sa, sb) in enumerate(
        [((3, 4), (4, 5)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)),
         ((4, 2), (2, 2)), ((1, 5, 3), (1, 3, 2))]
    ):
        rng = np.random.default_rng(40 + seed)
        store = store_with(rng, a=sa, b=sb)
        check(lambda s=store: ad.reduce_sum(ad.square(ad.matmul(s.leaf("a"), s.leaf("b")))), store)

    # einsum specs used by the model
    for seed, (spec, sa, sb) in enumerate([
        ("ij,jk->ik", (3, 4), (4, 2)),
        ("bth,bsh->bts", (2, 3, 4), (2, 5, 4)),
        ("l,lbth->bth", (3,), (3, 2, 4, 5)),
        ("jhd,bsjd->bsjh", (2, 3, 4), (2, 5, 2, 4)),
        ("bts,bsh->bth", (2, 3, 4), (2, 4, 5)),
    ]):
        rng = np.random.default_rng(60 + seed)
        store = store_with(rng, a=sa, b=sb)
        check(lambda s=store, sp=spec: ad.reduce_sum(
            ad.square(ad.einsum2(sp, s.leaf("a"), s.leaf("b")))), store)

    # unaries; log/sqrt/fractional powers get positive inputs
    unary_cases = [
        (ad.tanh, False), (ad.exp, False), (ad.square, False), (ad.neg, False),
        (ad.log, True), (ad.sqrt, True),
        (lambda x: ad.power(x, 3.0), False), (lambda x: ad.power(x, 1.5), True),
    ]
    for seed in range(3):
        for i, (op, positive) in enumerate(unary_cases):
            rng = np.random.default_rng(100 + 10 * seed + i)
            store = ParamStore()
            values = rng.uniform(0.3, 2.0, size=(3, 4)) if positive else rng.normal(size=(3, 4))
            store.add("x", values)
            check(lambda s=store, o=op: ad.reduce_sum(o(s.leaf("x"))), store)

    # reductions over every axis form
    for seed, (red, kwargs) in enumerate(itertools.product(
        (ad.reduce_sum, ad.reduce_mean),
        ({}, {"axis": 0}, {"axis": -1}, {"axis": (0, 2)}, {"axis": 1, "keepdims": True}),
    )):
        rng = np.random.default_rng(200 + seed)
        store = store_with(rng, x=(2, 3, 4))
        check(lambda s=store, r=red, kw=kwargs: ad.reduce_sum(
            ad.square(r(s.leaf("x"), **kw))), store)

    # softmax / logsumexp, including an overflow-prone scale
    for seed, (op, axis, scale) in enumerate([
        (ad.softmax, -1, 1.0), (ad.softmax, 0, 1.0), (ad.softmax, 1, 30.0),
        (ad.logsumexp, -1, 1.0), (ad.logsumexp, 0, 1.0), (ad.logsumexp, 1, 30.0),
    ]):
        rng = np.random.default_rng(240 + seed)
        store = ParamStore()
        store.add("x", rng.normal(size=(2, 3, 4)) * scale)
        check(lambda s=store, o=op, a=axis: ad.reduce_sum(ad.square(o(s.leaf("x"), axis=a))), store)

    # shape and indexing ops
    rng = np.random.default_rng(300)
    shape_cases = [
        lambda x: ad.reshape(x, (4, 6)),
        lambda x: ad.reshape(x, (24,)),
        lambda x: ad.transpose(x, (2, 0, 1)),
        lambda x: ad.transpose(x),
        lambda x: ad.take(x, (slice(None), 1)),
        lambda x: ad.take(x, (np.array([0, 1, 0]),)),
        lambda x: ad.stack([x, x], axis=0),
        lambda x: ad.concat([x, x], axis=-1),
        lambda x: ad.shift_time(x, 1),
        lambda x: ad.shift_time(x, 2),
        lambda x: ad.l2_normalize(x),
        lambda x: ad.l2_normalize(x, axis=0),
    ]
    for i, op in enumerate(shape_cases):
        store = ParamStore()
        store.add("x", np.random.default_rng(300 + i).normal(size=(2, 3, 4)))
        check(lambda s=store, o=op: ad.reduce_sum(ad.square(o(s.leaf("x")))), store)

    # model building blocks
    rng = np.random.default_rng(400)
    store = ParamStore()
    init_mlp_params(store, "m", 5, 4, 3, rng)
    x = rng.normal(size=(4, 5))
    check(lambda: ad.reduce_sum(ad.square(mlp2(store, "m", x))), store)

    store = ParamStore()
    init_fmri_adapter_params(store, "ad", 6, 5, 4, rng)
    seq = rng.normal(size=(2, 6, 5))
    check(lambda: ad.reduce_sum(ad.square(fmri_adapt_sequence(store, "ad", seq))), store)

    store = ParamStore()
    store.add("taps", rng.normal(size=(3, 4, 4)))
    h = rng.normal(size=(2, 6, 4))
    check(lambda: ad.reduce_sum(ad.square(
        dilated_causal_conv(ad.constant(h), store.leaf("taps"), 2))), store)

    store = ParamStore()
    init_conv_stack_params(store, "ms", 2, 3, 4, 4, rng)
    check(lambda: ad.reduce_sum(ad.square(multiscale_features(store, "ms", h, [1, 2])[2])), store)

    model = ModelConfig(hidden_dim=4, scales=2, heads=2, ffn_dim=8, max_positions=16)
    store = ParamStore()
    init_context_params(store, "ctx", model, rng)
    check(lambda: ad.reduce_sum(ad.square(attention_context(store, "ctx", h, 2)[0])), store)
    check(lambda: ad.reduce_sum(ad.square(
        prediction_head(store, "ctx", attention_context(store, "ctx", h, 2)[0]))), store)

    ncfg = NtclConfig(offset=2)
    store = ParamStore()
    store.add("p", rng.normal(size=(3, 4)))
    store.add("t", rng.normal(size=(3, 4)))
    check(lambda: ntcl_loss(store.leaf("p"), store.leaf("t"), ncfg), store)

    store = ParamStore()
    init_context_params(store, "dir", model, rng)
    store.add("src", rng.normal(size=(2, 5, 4)))
    store.add("tgt", rng.normal(size=(2, 5, 4)))
    check(lambda: direction_loss(store, "dir", store.leaf("src"), store.leaf("tgt"), ncfg), store)

    kernel = hrf_kernel(1.0, 12)
    store = ParamStore()
    store.add("z", rng.normal(size=(2, 6, 3)))
    check(lambda: ad.reduce_sum(ad.square(hrf_operator(store.leaf("z"), kernel))), store)
    check(lambda: temporal_loss([store.leaf("z")], kernel), store)

    store = ParamStore()
    store.add("f", rng.normal(size=(4, 3)))
    store.add("v", rng.normal(size=(4, 3)))
    check(lambda: structural_loss([store.leaf("f")], [store.leaf("v")]), store)
    check(lambda: match_loss(
        temporal_loss([ad.reshape(store.leaf("f"), (1, 4, 3))], kernel),
        structural_loss([store.leaf("f")], [store.leaf("v")]),
        MatchConfig(beta_struct=0.5)), store)

    book = new_codebook(CodebookConfig(size=4), 3, rng)
    store = ParamStore()
    store.add("e", rng.normal(size=(4, 3)))
    quanted = {m: quantize(store.value("e"), book).quantized for m in MODALITIES}
    check(lambda: commitment_loss({m: store.leaf("e") for m in MODALITIES}, quanted, 0.25), store)

    # the composed training objective, straight-through offsets frozen at the
    # base point so the surrogate stays differentiable across probe points
    for seed in (11, 12):
        synth = SynthConfig(n_train=4, n_test=2, seed=seed,
                            dim_fmri=6, dim_video=5, dim_caption=4)
        samples = [s for s in generate_dataset(synth) if s.split == "train"]
        tiny = ModelConfig(hidden_dim=4, scales=2, heads=2, ffn_dim=8, hrf_length=10)
        tcfg = TrainConfig(batch_size=2, total_steps=1)
        state = init_state(dims_from_samples(samples, synth.tr_seconds),
                           tiny, tcfg, NtclConfig(), MatchConfig(), CodebookConfig(size=4))
        batch = batch_for_step(samples, tcfg, 0)
        offsets: dict = {}
        check(lambda st=state, b=batch, off=offsets: total_loss(st, b, st_offsets=off)[0],
              state.store)

    elapsed = time.monotonic() - start
    ok = count >= 100 and worst < FD_TOL and elapsed < 60.0
    criterion(
        "gradient-integrity", ok,
        f"{count} randomized instances, worst rel err {worst:.3e} "
        f"(tol {FD_TOL:.0e}), {elapsed:.1f}s (limit 60s)",
    )


# =====================================================================
# oracle equivalence: five independently coded references, 1e-10,
# >= 20 random instances each
# =====================================================================


def test_oracle_equivalence():
    worst = {"quantize": 0.0, "stats": 0.0, "ema": 0.0, "structural": 0.0, "hrf": 0.0}

    # nearest-entry quantization vs an exhaustive python scan
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 6))
        book = new_codebook(CodebookConfig(size=int(rng.integers(3, 9))), dim, rng)
        feats = rng.normal(size=(int(rng.integers(1, 10)), dim))
        got = quantize(feats, book)
        for i, row in enumerate(feats):
            dists = [float(((row - e) ** 2).sum()) for e in book.entries]
            best = int(np.argmin(dists))
            assert got.indices[i] == best
            worst["quantize"] = max(
                worst["quantize"], float(np.abs(got.quantized[i] - book.entries[best]).max())
            )

    # batched sufficient statistics vs a per-row python accumulation
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        book = new_codebook(CodebookConfig(size=5), 3, rng)
        n = int(rng.integers(2, 9))
        feats = {m: rng.normal(size=(n, 3)) for m in MODALITIES}
        assigns = {m: quantize(feats[m], book) for m in MODALITIES}
        w = float(rng.uniform(0.2, 1.8))
        lam = float(rng.uniform(0.0, 1.0))
        got = sufficient_stats(assigns, feats, w, lam)
        for m in MODALITIES:
            others = [o for o in MODALITIES if o != m]
            counts = np.zeros(book.size)
            sums = np.zeros((book.size, 3))
            wm = w if m == "fmri" else 1.0
            for i in range(n):
                code = int(assigns[m].indices[i])
                mixed = lam * feats[m][i] + sum(
                    ((1.0 - lam) / 2.0) * feats[o][i] for o in others
                )
                counts[code] += wm
                sums[code] += wm * mixed
            worst["stats"] = max(
                worst["stats"],
                float(np.abs(got[m][0] - counts).max()),
                float(np.abs(got[m][1] - sums).max()),
            )

    # the EMA update vs the recurrence unrolled step by step in plain numpy
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        book = new_codebook(CodebookConfig(size=5), 3, rng)
        ref_counts = book.ema_counts.copy()
        ref_sums = book.ema_sums.copy()
        ref_entries = book.entries.copy()
        g = book.cfg.decay
        for _ in range(3):
            feats = {m: rng.normal(size=(6, 3)) for m in MODALITIES}
            assigns = {m: quantize(feats[m], book) for m in MODALITIES}
            stats = sufficient_stats(assigns, feats, 1.3, 0.7)
            ema_update(book, stats)
            batch_counts = sum(stats[m][0] for m in MODALITIES)
            batch_sums = sum(stats[m][1] for m in MODALITIES)
            ref_counts = g * ref_counts + (1.0 - g) * batch_counts
            ref_sums = g * ref_sums + (1.0 - g) * batch_sums
            touched = batch_counts > 0
            ref_entries[touched] = (
                ref_sums[touched] / np.maximum(ref_counts[touched], COUNT_EPS)[:, None]
            )
        worst["ema"] = max(
            worst["ema"],
            float(np.abs(book.entries - ref_entries).max()),
            float(np.abs(book.ema_counts - ref_counts).max()),
            float(np.abs(book.ema_sums - ref_sums).max()),
        )

    # structural loss vs brute-force pairwise loops
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        b = int(rng.integers(2, 7))
        scales = int(rng.integers(1, 4))
        f = [rng.normal(size=(b, int(rng.integers(2, 6)))) for _ in range(scales)]
        v = [rng.normal(size=(b, fs.shape[1])) for fs in f]
        got = structural_loss(f, v).item()
        per_scale = []
        for fs, vs in zip(f, v):
            acc = 0.0
            for i in range(b):
                for j in range(b):
                    if i == j:
                        continue
                    fi = fs[i] / (np.linalg.norm(fs[i]) + 1e-8)
                    fj = fs[j] / (np.linalg.norm(fs[j]) + 1e-8)
                    vi = vs[i] / (np.linalg.norm(vs[i]) + 1e-8)
                    vj = vs[j] / (np.linalg.norm(vs[j]) + 1e-8)
                    acc += (float(fi @ fj) - float(vi @ vj)) ** 2
            per_scale.append(acc / (b * (b - 1)))
        worst["structural"] = max(worst["structural"], abs(got - float(np.mean(per_scale))))

    # the banded convolution operator vs direct causal convolution
    for seed in range(20):
        rng = np.random.default_rng(400 + seed)
        tr = float(rng.uniform(0.5, 2.0))
        # keep the sampled span past the truncation warning threshold
        kernel = hrf_kernel(tr, int(rng.integers(math.ceil(12.0 / tr) + 1, 45)))
        seq = rng.normal(size=(int(rng.integers(3, 20)), int(rng.integers(1, 6))))
        got = hrf_operator(seq, kernel).value
        want = np.zeros_like(seq)
        for t in range(seq.shape[0]):
            for j in range(min(kernel.length, t + 1)):
                want[t] += kernel.taps[j] * seq[t - j]
        worst["hrf"] = max(worst["hrf"], float(np.abs(got - want).max()))

    bad = {k: v for k, v in worst.items() if v > ORACLE_TOL}
    criterion(
        "oracle-equivalence", not bad,
        "20 instances each, max diffs "
        + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
        + f" (tol {ORACLE_TOL:.0e})",
    )


# =====================================================================
# synchronized-update fairness: modality order cannot exist; the
# sequential fallback demonstrably violates that on the same inputs
# =====================================================================


def test_synchronized_update_fairness():
    instances = 10
    sequential_diffs = 0
    for seed in range(instances):
        rng = np.random.default_rng(500 + seed)
        base = new_codebook(CodebookConfig(size=6), 4, rng)
        feats = {m: rng.normal(size=(6, 4)) for m in MODALITIES}
        assigns = {m: quantize(feats[m], base) for m in MODALITIES}
        stats = sufficient_stats(assigns, feats, 1.4, 0.7)

        reference = None
        for perm in itertools.permutations(MODALITIES):
            book = copy.deepcopy(base)
            ema_update(book, {m: stats[m] for m in perm})
            snapshot = (book.entries.copy(), book.ema_counts.copy(), book.ema_sums.copy())
            if reference is None:
                reference = snapshot
            else:
                for got, want in zip(snapshot, reference):
                    assert np.array_equal(got, want), "synchronized update saw order"

        book_a = copy.deepcopy(base)
        book_b = copy.deepcopy(base)
        ema_update_sequential(book_a, stats, ("fmri", "video", "text"))
        ema_update_sequential(book_b, stats, ("text", "video", "fmri"))
        if not np.array_equal(book_a.entries, book_b.entries):
            sequential_diffs += 1

    criterion(
        "synchronized-update-fairness", sequential_diffs == instances,
        f"{instances} instances bit-identical under all 6 modality orders; "
        f"sequential mode diverged on {sequential_diffs}/{instances}",
    )


# =====================================================================
# reduction checks: degenerate settings recover the simpler objects
# =====================================================================


def test_reductions():
    evidence = []

    # full self-mix and unit variance weight collapse onto unimodal EMA-VQ
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(600 + seed)
        book = new_codebook(CodebookConfig(size=5), 3, rng)
        mirror = copy.deepcopy(book)
        feats = {m: rng.normal(size=(4, 3)) for m in MODALITIES}
        assigns = {m: quantize(feats[m], book) for m in MODALITIES}
        ema_update(book, sufficient_stats(assigns, feats, 1.0, 1.0))

        pooled = np.concatenate([feats[m] for m in MODALITIES])
        assign = quantize(pooled, mirror)
        g = mirror.cfg.decay
        counts = g * mirror.ema_counts + (1 - g) * assign.one_hot.sum(axis=0)
        sums = g * mirror.ema_sums + (1 - g) * assign.one_hot.T @ pooled
        entries = mirror.entries.copy()
        touched = assign.one_hot.sum(axis=0) > 0
        entries[touched] = sums[touched] / np.maximum(counts[touched], COUNT_EPS)[:, None]
        worst = max(
            worst,
            float(np.abs(book.entries - entries).max()),
            float(np.abs(book.ema_counts - counts).max()),
        )
    ok_unimodal = worst <= ORACLE_TOL
    evidence.append(f"unimodal collapse diff {worst:.2e}")

    # zero structural weight reduces the matching loss to its temporal term
    rng = np.random.default_rng(610)
    kernel = hrf_kernel(1.0, 12)
    seqs = [rng.normal(size=(2, 6, 3))]
    t_node = temporal_loss(seqs, kernel)
    s_node = structural_loss([rng.normal(size=(4, 3))], [rng.normal(size=(4, 3))])
    gap = abs(match_loss(t_node, s_node, MatchConfig(beta_struct=0.0)).item() - t_node.item())
    ok_struct = gap <= 1e-12
    evidence.append(f"beta_struct=0 gap {gap:.2e}")

    # a single-sample batch has no negatives: the contrastive loss is zero
    single = ntcl_loss(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), NtclConfig())
    ok_single = single.item() == 0.0
    evidence.append(f"B=1 loss {single.item():.1e}")

    # indistinguishable targets leave ln(B) of irreducible confusion
    ok_uniform = True
    for b in (2, 5, 32):
        preds = rng.normal(size=(b, 4))
        targets = np.tile(rng.normal(size=(1, 4)), (b, 1))
        gap = abs(ntcl_loss(preds, targets, NtclConfig()).item() - math.log(b))
        ok_uniform = ok_uniform and gap <= 1e-9
    evidence.append("uniform-similarity loss = ln B within 1e-9")

    criterion(
        "reduction-checks",
        ok_unimodal and ok_struct and ok_single and ok_uniform,
        "; ".join(evidence),
    )


# =====================================================================
# the desk benchmark: 3 seeds x 4 variants, shared by the end-to-end
# and ablation-ordering criteria
# =====================================================================

SEEDS = (0, 1, 2)
VARIANTS = (
    ("full", {}),
    ("no_ntcl", {"ablate_ntcl": True}),
    ("no_matching", {"ablate_matching": True}),
    ("sequential_ema", {"sequential_ema": True}),
)


@pytest.fixture(scope="module")
def benchmark():
    cfg = load_config(str(DESK_CFG))
    cfg.validate()
    samples = generate_dataset(cfg.synth)
    train_samples = [s for s in samples if s.split == "train"]
    test_samples = [s for s in samples if s.split == "test"]
    dims = dims_from_samples(train_samples, cfg.synth.tr_seconds)

    results = {name: {"r5": [], "elapsed": []} for name, _ in VARIANTS}
    for name, overrides in VARIANTS:
        for seed in SEEDS:
            train_cfg = dataclasses.replace(cfg.train, seed=seed, **overrides)
            state = init_state(dims, cfg.model, train_cfg, cfg.ntcl, cfg.match, cfg.book)
            start = time.monotonic()
            run_training(state, train_samples)
            elapsed = time.monotonic() - start
            report = full_report(state, test_samples, fingerprint=cfg.fingerprint())
            r5 = report.recalls["fmri_to_video@5"]
            results[name]["r5"].append(r5)
            results[name]["elapsed"].append(elapsed)
            print(f"  benchmark {name} seed {seed}: R@5 {r5:.2f}% in {elapsed:.0f}s")
    return {
        "results": results,
        "n_train": len(train_samples),
        "n_test": len(test_samples),
        "data_seed": cfg.synth.seed,
    }


@pytest.mark.benchmark
def test_end_to_end_learning(benchmark):
    full = benchmark["results"]["full"]
    mean_r5 = float(np.mean(full["r5"]))
    slowest = max(full["elapsed"])
    chance = 100.0 * 5.0 / benchmark["n_test"]
    ok = (
        benchmark["n_train"] == 512
        and benchmark["n_test"] == 128
        and benchmark["data_seed"] == 42
        and mean_r5 >= 5.0 * chance
        and slowest < 600.0
    )
    criterion(
        "end-to-end-learning", ok,
        f"512/128 data (seed 42), full-model R@5 per seed "
        f"{[f'{v:.2f}' for v in full['r5']]}, mean {mean_r5:.2f}% "
        f"(bar {5.0 * chance:.2f}% = 5x chance), slowest run {slowest:.0f}s "
        f"(limit 600s)",
    )


@pytest.mark.benchmark
def test_ablation_ordering(benchmark):
    means = {
        name: float(np.mean(benchmark["results"][name]["r5"]))
        for name, _ in VARIANTS
    }
    full_top = all(means["full"] >= means[name] for name, _ in VARIANTS[1:])
    matching_matters = means["no_matching"] < means["full"]
    criterion(
        "ablation-ordering", full_top and matching_matters,
        "mean R@5 " + ", ".join(f"{k}={v:.2f}%" for k, v in means.items()),
    )


# =====================================================================
# determinism and resume: bit-for-bit
# =====================================================================


def test_determinism_and_resume(tmp_path):
    synth = SynthConfig(n_train=12, n_test=4, seed=3)
    samples = [s for s in generate_dataset(synth) if s.split == "train"]
    model = ModelConfig(hidden_dim=8, scales=2, heads=2, ffn_dim=16, hrf_length=12)

    def fresh():
        cfg = TrainConfig(batch_size=4, total_steps=14, lr_max=1e-3, lr_min=1e-4)
        return init_state(dims_from_samples(samples, synth.tr_seconds),
                          copy.deepcopy(model), cfg, NtclConfig(), MatchConfig(),
                          CodebookConfig(size=6))

    run_a, run_b = fresh(), fresh()
    rows_a = run_training(run_a, samples)
    rows_b = run_training(run_b, samples)
    repro = rows_a == rows_b and all(
        np.array_equal(run_a.store.value(n), run_b.store.value(n))
        for n in run_a.store.names()
    ) and np.array_equal(run_a.book.entries, run_b.book.entries)

    interrupted = fresh()
    for step in range(7):
        train_step(interrupted, batch_for_step(samples, interrupted.train, step))
    path = str(tmp_path / "half.ck")
    save_checkpoint(interrupted, path)
    resumed = load_checkpoint(path)
    run_training(resumed, samples)
    resume_exact = all(
        np.array_equal(resumed.store.value(n), run_a.store.value(n))
        for n in run_a.store.names()
    ) and np.array_equal(resumed.book.entries, run_a.book.entries) and (
        np.array_equal(resumed.book.ema_counts, run_a.book.ema_counts)
    )

    criterion(
        "determinism-and-resume", repro and resume_exact,
        f"identical 14-step reruns: {repro}; checkpoint at step 7 resumed to "
        f"bit-exact match: {resume_exact}",
    )


# =====================================================================
# kernel shape: leading zero, unit mass, physiologically placed peak
# =====================================================================


def test_hrf_kernel_shape():
    from scipy.stats import gamma as gamma_dist

    fine_t = np.arange(0.01, 32.0, 0.01)
    fine = gamma_dist.pdf(fine_t, 6.0) - gamma_dist.pdf(fine_t, 16.0) / 6.0
    fine_peak = float(fine_t[np.argmax(fine)])

    checks = []
    for tr, length in [(1.0, 16), (0.72, 45), (2.0, 16), (0.5, 64)]:
        kernel = hrf_kernel(tr, length)
        peak_s = float(np.argmax(kernel.taps)) * tr
        checks.append(
            kernel.taps[0] == 0.0
            and abs(float(kernel.taps.sum()) - 1.0) <= 1e-12
            and 3.0 <= peak_s <= 8.0
            and abs(peak_s - fine_peak) <= tr
        )
    criterion(
        "hrf-kernel-shape", all(checks),
        f"taps[0]=0, unit sum within 1e-12, peak within one sample of the "
        f"fine-grid optimum {fine_peak:.2f}s and inside [3s, 8s] for 4 grids",
    )
