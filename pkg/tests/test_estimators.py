import numpy as np
import pytest
from sklearn.base import clone

from clickintent.clicklog import SynthSpec, synth_generate
from clickintent.cosets import extract_sets
from clickintent.estimators import IntentClassifier, QueryEmbedder


def small_corpus(seed=0):
    events, truth = synth_generate(SynthSpec(
        n_intents=4, n_queries=80, vocab_overlap=0.2, n_sessions=120,
        seed=seed))
    return extract_sets(events), truth


class TestQueryEmbedder:
    def test_sklearn_params_round_trip(self):
        est = QueryEmbedder(dim=16, steps=5)
        params = est.get_params()
        assert params["dim"] == 16 and params["steps"] == 5
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_unfitted_transform_raises(self):
        with pytest.raises(RuntimeError):
            QueryEmbedder().transform(["q"])

    def test_invalid_objective_rejected(self):
        corpus, _ = small_corpus()
        with pytest.raises(ValueError):
            QueryEmbedder(objective="triplet").fit(corpus)

    def test_zero_steps_is_untrained_baseline(self):
        corpus, _ = small_corpus()
        est = QueryEmbedder(vocab_size=512, dim=8, hidden=8, steps=0, seed=3)
        embs = est.fit(corpus).transform(["one query", "another"])
        assert embs.shape == (2, 8)
        assert est.loss_curve_ == []

    def test_fit_is_deterministic_per_seed(self):
        corpus, _ = small_corpus()
        kwargs = dict(vocab_size=512, dim=8, hidden=8, steps=6,
                      sets_per_batch=4, queries_per_set=4, seed=5)
        e1 = QueryEmbedder(**kwargs).fit(corpus)
        e2 = QueryEmbedder(**kwargs).fit(corpus)
        assert e1.loss_curve_ == e2.loss_curve_
        assert np.array_equal(e1.transform(["a b"]), e2.transform(["a b"]))

    @pytest.mark.parametrize("objective", ["multiset", "pairwise"])
    def test_training_reduces_loss(self, objective):
        corpus, _ = small_corpus()
        est = QueryEmbedder(vocab_size=1024, dim=16, hidden=16, steps=60,
                            sets_per_batch=4, queries_per_set=6,
                            objective=objective, seed=0)
        est.fit(corpus)
        early = np.mean(est.loss_curve_[:10])
        late = np.mean(est.loss_curve_[-10:])
        assert late < early

    def test_transform_deterministic(self):
        corpus, _ = small_corpus()
        est = QueryEmbedder(vocab_size=512, dim=8, hidden=8, steps=0).fit(corpus)
        assert np.array_equal(est.transform(["x y"]), est.transform(["x y"]))


class TestIntentClassifier:
    def make_data(self, n=60, seed=0):
        rng = np.random.default_rng(seed)
        words = {0: "alpha", 1: "beta", 2: "gamma"}
        X, Y = [], []
        for i in range(n):
            label = i % 3
            X.append(" ".join(f"{words[label]}{rng.integers(5)}"
                              for _ in range(3)))
            y = np.zeros(3, dtype=int)
            y[label] = 1
            Y.append(y)
        return X, Y

    def test_sklearn_params_round_trip(self):
        est = IntentClassifier(lr=0.1, epochs=7)
        assert clone(est).get_params()["epochs"] == 7

    def test_fit_predict_score_on_separable_data(self):
        X, Y = self.make_data()
        clf = IntentClassifier(epochs=40, seed=0)
        clf.fit(X, Y, X, Y)
        assert clf.score(X, Y) > 0.95
        proba = clf.predict_proba(X[:2])
        assert proba.shape == (2, 3)
        assert np.all((proba >= 0) & (proba <= 1))

    def test_predict_applies_thresholds(self):
        X, Y = self.make_data(n=30)
        clf = IntentClassifier(epochs=20, seed=1).fit(X, Y, X, Y)
        pred = clf.predict(X)
        manual = (clf.predict_proba(X) >= clf.thresholds_[None, :]).astype(int)
        assert np.array_equal(pred, manual)

    def test_pretrained_encoder_beats_random_init(self):
        # representation quality carries into the downstream classifier
        corpus, truth = small_corpus(seed=2)
        kwargs = dict(vocab_size=1024, dim=16, hidden=24, sets_per_batch=4,
                      queries_per_set=6, seed=0)
        pretrained = QueryEmbedder(steps=120, **kwargs).fit(corpus)
        untrained = QueryEmbedder(steps=0, **kwargs).fit(corpus)

        queries = sorted(truth.query_global_intent)
        intents = truth.intents
        Y = []
        for q in queries:
            y = np.zeros(len(intents), dtype=int)
            y[intents.index(truth.query_global_intent[q])] = 1
            Y.append(y)
        n_train = int(0.7 * len(queries))
        scores = {}
        for name, emb in [("pretrained", pretrained), ("random", untrained)]:
            clf = IntentClassifier(encoder_params=emb.params_, epochs=60, seed=0)
            clf.fit(queries[:n_train], Y[:n_train],
                    queries[n_train:], Y[n_train:])
            scores[name] = clf.score(queries[n_train:], Y[n_train:])
        assert scores["pretrained"] > scores["random"]
