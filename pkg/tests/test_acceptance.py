"""Acceptance suite: one test per criterion, one pass/fail line each.

Criteria are property-based plus directional trend reproduction at desk
scale; stated tolerances and runtime budgets are asserted, not advisory.
Every numeric check is made against the independent brute-force oracles
in oracles.py, never against the implementation under test.
"""

import itertools
import math
import time
import warnings

import numpy as np
import pytest

from clickintent import encoder as enc
from clickintent.classify import ContextConfig
from clickintent.clicklog import SynthSpec, sessionize, synth_generate
from clickintent.cosets import extract_sets
from clickintent.estimators import QueryEmbedder
from clickintent.labeling import concordance_rate, perplexity
from clickintent.losses import (
    EmbeddedSet, LossConfig, bce_loss, bench_complexity, inter_loss,
    intra_loss, multiset_loss, pairwise_loss,
)
from clickintent.metrics import (
    ari, hit_rate_3, kmeans, ndcg_3, nmi, paired_ttest_one_sided,
    stratified_split,
)
from clickintent.pipeline import (
    derive_rules, label_corpus, load_config, session_eval,
)

from oracles import (
    oracle_ari, oracle_hit_rate_3, oracle_inter, oracle_intra,
    oracle_multiset, oracle_ndcg_3, oracle_nmi, oracle_perplexity,
)


def report(criterion, detail):
    print(f"ACCEPTANCE {criterion}: PASS ({detail})")


def random_sets(rng, k, n_max, d):
    sets = []
    for i in range(k):
        n = int(rng.integers(2, n_max + 1))
        w = rng.random(n) + 0.1
        w /= w.sum()
        sets.append(EmbeddedSet(rng.normal(size=(n, d)), w, f"s{i}"))
    return sets


def rel_err(analytic, numeric):
    return np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-8)


def flat_grad_check(sets, loss_fn):
    """Max relative error between analytic and central-difference gradients."""
    shapes = [s.embeddings.shape for s in sets]
    weights = [s.weights for s in sets]

    def value(flat):
        out, pos = [], 0
        for shape, w in zip(shapes, weights):
            size = shape[0] * shape[1]
            out.append(EmbeddedSet(flat[pos:pos + size].reshape(shape), w))
            pos += size
        return loss_fn(out)[0]

    _, grads = loss_fn(sets)
    analytic = np.concatenate([g.ravel() for g in grads])
    flat0 = np.concatenate([s.embeddings.ravel() for s in sets])
    numeric = enc.finite_diff_grad(value, flat0)
    return rel_err(analytic, numeric)


def test_criterion_1_gradient_correctness():
    """Analytic gradients of every loss match central finite differences."""
    start = time.time()
    rng = np.random.default_rng(100)
    worst = 0.0
    checks = 0

    for _ in range(8):  # pairwise: 8 instances of up to 5 triples
        n, d = int(rng.integers(2, 6)), int(rng.integers(2, 9))
        q, p, neg = rng.normal(size=(3, n, d))
        _, (dq, dp, dn) = pairwise_loss(q, p, neg)
        analytic = np.concatenate([dq.ravel(), dp.ravel(), dn.ravel()])

        def value(flat, n=n, d=d):
            a, b, c = flat.reshape(3, n, d)
            return pairwise_loss(a, b, c)[0]

        numeric = enc.finite_diff_grad(value, np.stack([q, p, neg]).ravel())
        worst = max(worst, rel_err(analytic, numeric))
        checks += 1

    for loss_fn in (intra_loss, inter_loss, multiset_loss):
        for _ in range(8):
            k = int(rng.integers(2, 5))
            d = int(rng.integers(2, 9))
            sets = random_sets(rng, k, 5, d)
            worst = max(worst, flat_grad_check(sets, loss_fn))
            checks += 1

    for _ in range(8):  # BCE in probability space
        y = (rng.random(6) > 0.5).astype(float)
        y_hat = rng.uniform(0.05, 0.95, size=6)
        _, grad = bce_loss(y, y_hat)
        numeric = enc.finite_diff_grad(lambda p: bce_loss(y, p)[0], y_hat.copy())
        worst = max(worst, rel_err(grad, numeric))
        checks += 1

    elapsed = time.time() - start
    assert checks >= 20
    assert worst < 1e-4
    assert elapsed < 30.0
    report(1, f"gradient correctness: {checks} instances, "
              f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_oracle_equivalence():
    """Optimized implementations equal literal brute-force oracles to 1e-9."""
    start = time.time()
    rng = np.random.default_rng(200)

    worst_loss = 0.0
    n_loss = 0
    for k in (2, 3, 4):
        for sizes in itertools.product((2, 3, 5), repeat=k):
            sets = []
            for i, n in enumerate(sizes):
                w = rng.random(n) + 0.1
                w /= w.sum()
                sets.append(EmbeddedSet(rng.normal(size=(n, 4)), w, f"s{i}"))
            as_lists = [(s.embeddings.tolist(), s.weights.tolist())
                        for s in sets]
            assert abs(intra_loss(sets)[0] - oracle_intra(as_lists)) < 1e-9
            assert abs(inter_loss(sets)[0] - oracle_inter(as_lists)) < 1e-9
            diff = abs(multiset_loss(sets)[0] - oracle_multiset(as_lists))
            worst_loss = max(worst_loss, diff)
            assert diff < 1e-9
            n_loss += 1

    worst_metric = 0.0
    for _ in range(30):
        n = int(rng.integers(4, 21))
        pred = rng.integers(0, 4, size=n).tolist()
        truth = rng.integers(0, 3, size=n).tolist()
        worst_metric = max(worst_metric,
                           abs(ari(pred, truth) - oracle_ari(pred, truth)),
                           abs(nmi(pred, truth) - oracle_nmi(pred, truth)))

        scores = rng.random((n, 5))
        y = (rng.random((n, 5)) > 0.5).astype(int)
        worst_metric = max(worst_metric, abs(
            hit_rate_3(scores, y) - oracle_hit_rate_3(scores.tolist(),
                                                      y.tolist())))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            value, excluded = ndcg_3(scores, y)
        o_value, o_excluded = oracle_ndcg_3(scores.tolist(), y.tolist())
        assert excluded == o_excluded
        worst_metric = max(worst_metric, abs(value - o_value))

        p = rng.random(6)
        p /= p.sum()
        worst_metric = max(worst_metric,
                           abs(perplexity(p) - oracle_perplexity(p.tolist())))
    assert worst_metric < 1e-9

    elapsed = time.time() - start
    assert elapsed < 60.0
    report(2, f"oracle equivalence: {n_loss} loss instances "
              f"(max diff {worst_loss:.1e}), 30 metric instances "
              f"(max diff {worst_metric:.1e}), {elapsed:.1f}s")


def test_criterion_3_closed_form_values():
    """Hand-derivable metric values are reproduced at stated tolerances."""
    for k in (1, 2, 4, 8):
        assert perplexity(np.full(k, 1.0 / k)) == float(k)

    scores = np.array([[0.9, 0.8, 0.7, 0.6]])
    for rank, expected in ((1, 1.0), (2, 0.63093), (3, 0.5)):
        truth = np.zeros((1, 4), dtype=int)
        truth[0, rank - 1] = 1
        assert abs(ndcg_3(scores, truth)[0] - expected) < 1e-6

    value, _ = bce_loss(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert abs(value - math.log(2.0)) < 1e-9

    report(3, "closed forms: perplexity(uniform-k)=k for k in {1,2,4,8}, "
              "NDCG@3 ranks 1/2/3 = 1/0.63093/0.5, BCE(ln 2)")


def test_criterion_4_scale_invariance():
    """Scaling all embeddings by 7.3 leaves every loss unchanged to 1e-9."""
    rng = np.random.default_rng(400)
    sets = random_sets(rng, 3, 5, 6)
    scaled = [EmbeddedSet(s.embeddings * 7.3, s.weights, s.set_id)
              for s in sets]
    worst = 0.0
    for fn in (intra_loss, inter_loss, multiset_loss):
        worst = max(worst, abs(fn(sets)[0] - fn(scaled)[0]))
    q, p, n = rng.normal(size=(3, 6, 5))
    worst = max(worst, abs(pairwise_loss(q, p, n)[0]
                           - pairwise_loss(q * 7.3, p * 7.3, n * 7.3)[0]))
    assert worst < 1e-9
    report(4, f"scale invariance x7.3: max value change {worst:.1e}")


def test_criterion_5_clustering_trend():
    """Multiset-trained embeddings out-cluster pairwise and untrained ones."""
    start = time.time()
    spec = SynthSpec(n_intents=8, n_queries=400, vocab_overlap=0.3,
                     n_sessions=500, seed=42)
    events, truth = synth_generate(spec)
    corpus = extract_sets(events)
    queries = sorted(truth.query_global_intent)
    truth_ids = np.array([truth.intents.index(truth.query_global_intent[q])
                          for q in queries])

    def cluster_ari(objective, steps, seed):
        est = QueryEmbedder(vocab_size=4096, dim=32, hidden=64,
                            objective=objective, steps=steps,
                            sets_per_batch=8, queries_per_set=8, seed=seed)
        est.fit(corpus)
        part = kmeans(est.transform(queries), k=8, restarts=5, seed=seed)
        return ari(part, truth_ids)

    seeds = range(5)
    multiset = [cluster_ari("multiset", 150, s) for s in seeds]
    pairwise = [cluster_ari("pairwise", 150, s) for s in seeds]
    untrained = [cluster_ari("multiset", 0, s) for s in seeds]

    gap = float(np.mean(multiset) - np.mean(untrained))
    t, p = paired_ttest_one_sided(multiset, pairwise)
    elapsed = time.time() - start
    assert gap >= 0.2
    assert float(np.mean(multiset)) > float(np.mean(pairwise))
    assert p < 0.05
    assert elapsed < 300.0
    report(5, f"clustering trend: ARI multiset {np.mean(multiset):.3f} > "
              f"pairwise {np.mean(pairwise):.3f} (one-sided p={p:.4f}) > "
              f"untrained {np.mean(untrained):.3f}, gap {gap:.3f} >= 0.2, "
              f"{elapsed:.0f}s")


def test_criterion_6_session_context_trend():
    """Session context helps: no-context < prev-query-only < all-context F1."""
    start = time.time()
    spec = SynthSpec(n_intents=8, n_queries=400, vocab_overlap=0.3,
                     n_sessions=500, drift_prob=0.4,
                     session_len_min=4, session_len_max=4, seed=42)
    events, _ = synth_generate(spec)
    sessions = sessionize(events)
    rules, taxonomy = derive_rules(events)
    labels, _ = label_corpus(events, rules, taxonomy, 0.2)
    config = load_config(overrides={
        "session_contexts": "none,prev-query,all", "curate_min_len": "4",
        "curate_max_len": "4", "vocab_size": "4096", "seed": "42"}, env={})
    params = enc.EncoderParams.init(vocab_size=4096, dim=64, hidden=128,
                                    seed=42)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        payload = session_eval(sessions, params, rules, taxonomy, labels,
                               config)
    f1 = {name: payload["contexts"][name]["f1"]
          for name in ("none", "prev-query", "all")}
    elapsed = time.time() - start
    assert f1["all"] - f1["none"] >= 0.05
    assert f1["none"] < f1["prev-query"] < f1["all"]
    assert elapsed < 300.0
    report(6, f"session context trend: F1 none {f1['none']:.3f} < "
              f"prev-query {f1['prev-query']:.3f} < all {f1['all']:.3f}, "
              f"{elapsed:.0f}s")


def test_criterion_7_complexity_claim():
    """Multiset time grows ~linearly in N, pairwise ~quadratically."""
    start = time.time()
    rows = bench_complexity(k_values=(4,), n_values=(100, 200, 400), trials=5)
    seconds = {(r.loss, r.n): r.median_seconds for r in rows}
    ratios = {}
    for loss in ("multiset", "pairwise"):
        ratios[loss] = [seconds[loss, 200] / seconds[loss, 100],
                        seconds[loss, 400] / seconds[loss, 200]]
    elapsed = time.time() - start
    assert all(r < 2.6 for r in ratios["multiset"])
    assert all(r >= 3.2 for r in ratios["pairwise"])
    assert elapsed < 120.0
    report(7, "complexity: N-doubling ratios multiset "
              f"{[round(r, 2) for r in ratios['multiset']]} < 2.6, pairwise "
              f"{[round(r, 2) for r in ratios['pairwise']]} >= 3.2, "
              f"{elapsed:.0f}s")


def test_criterion_8_concordance_rate():
    """CR matches hand-counted fixtures; drift-free corpora give CR = 1."""
    from test_labeling import RULES, HS_TAXONOMY
    from test_labeling import TestConcordance as Fixtures

    fx = Fixtures()
    one_hot = {q: HS_TAXONOMY.vector(["drug_info"]) for q in ("q1", "q2", "q3")}
    session = fx.make_session(["/drug/a", "/wellness/b", "/wellness/c"],
                              ["q1", "q2", "q3"])
    assert concordance_rate(session, one_hot, RULES) == 1.0 / 3.0
    session = fx.make_session(["/drug/a", "/drug/b"], ["q1", "q2"])
    assert concordance_rate(session, one_hot, RULES) == 1.0
    session = fx.make_session(["/wellness/a", "/wellness/b"], ["q1", "q2"])
    assert concordance_rate(session, one_hot, RULES) == 0.0

    spec = SynthSpec(n_intents=6, n_queries=120, n_sessions=150,
                     drift_prob=0.0, seed=8)
    events, _ = synth_generate(spec)
    rules, taxonomy = derive_rules(events)
    labels, _ = label_corpus(events, rules, taxonomy, 0.2)
    rates = [concordance_rate(s, labels, rules, taxonomy)
             for s in sessionize(events)]
    assert rates and all(r == 1.0 for r in rates)
    report(8, "concordance: fixtures 1/3, 1.0, 0.0 exact; "
              f"drift-free corpus CR = 1.0 over {len(rates)} sessions")


def test_criterion_9_stratified_split():
    """Per-group 60:20:20 within 1 point at scale; rare combos go to test."""
    rng = np.random.default_rng(900)
    items, labels = [], []
    sizes = {}
    for g in range(12):
        y = np.zeros(6, dtype=int)
        y[g % 6] = 1
        if g >= 6:
            y[(g + 2) % 6] = 1
        size = int(rng.integers(100, 400))
        sizes[tuple(y)] = size
        for i in range(size):
            items.append(f"g{g}i{i}")
            labels.append(y)
    unique = np.zeros(6, dtype=int)
    unique[:3] = 1
    items.append("rare")
    labels.append(unique)

    train, val, test = stratified_split(items, labels, seed=0)
    splits = {x: "train" for x in train}
    splits.update({x: "val" for x in val})
    splits.update({x: "test" for x in test})

    worst = 0.0
    for g in range(12):
        members = [x for x in items if x.startswith(f"g{g}i")]
        n = len(members)
        fractions = [sum(splits[x] == part for x in members) / n
                     for part in ("train", "val", "test")]
        for frac, target in zip(fractions, (0.6, 0.2, 0.2)):
            worst = max(worst, abs(frac - target))
    assert worst <= 0.01

    assert splits["rare"] == "test"
    assert stratified_split(items, labels, seed=0) == (train, val, test)
    assert len(train) + len(val) + len(test) == len(items)
    report(9, f"stratified split: per-group ratio deviation {worst:.4f} <= "
              "0.01, unique combination in test, deterministic per seed")


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
