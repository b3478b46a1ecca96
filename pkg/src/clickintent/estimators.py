"""Sklearn-style estimators wrapping the encoder, losses, and classifier.

QueryEmbedder fits the toy encoder on a CoQueryCorpus with the multiset
or pairwise objective and transforms query strings into embeddings.
IntentClassifier fits the multi-label head on (text, label) data. Both
follow the fit/transform/predict + get_params conventions so they compose
with sklearn tooling.
"""

from __future__ import annotations

import random

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import encoder as enc
from .classify import ClassifierConfig, train_classifier
from .cosets import CoQueryCorpus, batch_sample
from .losses import EmbeddedSet, LossConfig, multiset_loss, pairwise_loss

OBJECTIVES = ("multiset", "pairwise")


class QueryEmbedder(BaseEstimator, TransformerMixin):
    """Trainable query embedding model with a contrastive set objective.

    fit(corpus) runs `steps` optimizer steps of the chosen objective over
    seeded batches; steps=0 leaves the seeded random initialization in
    place (the untrained baseline). transform(queries) returns a (n, dim)
    embedding matrix.
    """

    def __init__(self, vocab_size: int = 32768, dim: int = 64, hidden: int = 128,
                 objective: str = "multiset", sets_per_batch: int = 8,
                 queries_per_set: int = 8, lr: float = 1e-3, steps: int = 200,
                 epsilon: float = 1e-6, cosine_clamp: float = 1.0 - 1e-6,
                 leave_one_out: bool = False, seed: int = 0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.hidden = hidden
        self.objective = objective
        self.sets_per_batch = sets_per_batch
        self.queries_per_set = queries_per_set
        self.lr = lr
        self.steps = steps
        self.epsilon = epsilon
        self.cosine_clamp = cosine_clamp
        self.leave_one_out = leave_one_out
        self.seed = seed

    def _loss_config(self) -> LossConfig:
        return LossConfig(epsilon=self.epsilon, cosine_clamp=self.cosine_clamp,
                          leave_one_out=self.leave_one_out)

    def fit(self, X: CoQueryCorpus, y=None):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        cfg = self._loss_config()
        params = enc.EncoderParams.init(self.vocab_size, self.dim, self.hidden,
                                        seed=self.seed)
        state = enc.AdamState.init(params)
        curve = []
        n_eligible = len(X.eligible_sets())
        batch_size = min(self.sets_per_batch, n_eligible)
        for step in range(self.steps):
            step_seed = self.seed * 1_000_003 + step
            batch = batch_sample(X, batch_size, self.queries_per_set, seed=step_seed)
            loss = self._train_step(params, state, batch, cfg, step_seed)
            curve.append(loss)
        self.params_ = params
        self.loss_curve_ = curve
        self.tokenizer_ = enc.Tokenizer(self.vocab_size)
        return self

    def _train_step(self, params, state, batch, cfg, step_seed) -> float:
        queries = []
        index = {}
        for s in batch:
            for q in s.queries:
                if q not in index:
                    index[q] = len(queries)
                    queries.append(q)
        embs, caches = enc.encode_batch(params, queries)
        d_embs = np.zeros_like(embs)

        if self.objective == "multiset":
            sets = [EmbeddedSet(embs[[index[q] for q in s.queries]],
                                np.array(s.weights), s.set_id) for s in batch]
            loss, grads = multiset_loss(sets, cfg)
            for s, g in zip(batch, grads):
                for q, row in zip(s.queries, g):
                    d_embs[index[q]] += row
        else:
            triples = self._make_triples(batch, index, step_seed)
            if not triples:
                return 0.0
            qi = np.array([t[0] for t in triples])
            pi = np.array([t[1] for t in triples])
            ni = np.array([t[2] for t in triples])
            loss, (dq, dp, dn) = pairwise_loss(embs[qi], embs[pi], embs[ni], cfg)
            np.add.at(d_embs, qi, dq)
            np.add.at(d_embs, pi, dp)
            np.add.at(d_embs, ni, dn)

        grads = enc.backward(params, caches, d_embs)
        enc.adam_step(params.arrays(), grads, state, lr=self.lr)
        return float(loss)

    def _make_triples(self, batch, index, step_seed):
        """One (anchor, positive, negative) triple per member, per set."""
        rng = random.Random(step_seed ^ 0x5EED)
        triples = []
        for i, s in enumerate(batch):
            if len(s.queries) < 2:
                continue
            others = [j for j in range(len(batch)) if j != i and batch[j].queries]
            if not others:
                continue
            for a, q in enumerate(s.queries):
                pos = rng.choice([p for b, p in enumerate(s.queries) if b != a])
                other = batch[rng.choice(others)]
                neg = rng.choice(other.queries)
                triples.append((index[q], index[pos], index[neg]))
        return triples

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("QueryEmbedder is not fitted")
        embs, _ = enc.encode_batch(self.params_, list(X), self.tokenizer_)
        return embs


class IntentClassifier(BaseEstimator, ClassifierMixin):
    """Multi-label intent classifier over a fitted (or fresh) encoder."""

    def __init__(self, encoder_params: enc.EncoderParams | None = None,
                 lr: float = 0.2, epochs: int = 150, batch_size: int = 64,
                 patience: int = 5, freeze_encoder: bool = True,
                 encoder_lr: float = 1e-3, seed: int = 0):
        self.encoder_params = encoder_params
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.freeze_encoder = freeze_encoder
        self.encoder_lr = encoder_lr
        self.seed = seed

    def fit(self, X, Y, X_val=None, Y_val=None):
        Y = np.asarray(Y, dtype=int)
        params = self.encoder_params
        if params is None:
            params = enc.EncoderParams.init(seed=self.seed)
        config = ClassifierConfig(lr=self.lr, epochs=self.epochs,
                                  batch_size=self.batch_size,
                                  patience=self.patience,
                                  freeze_encoder=self.freeze_encoder,
                                  encoder_lr=self.encoder_lr, seed=self.seed)
        val = list(zip(X_val, np.asarray(Y_val, dtype=int))) if X_val is not None else []
        trained = train_classifier(params, list(zip(X, Y)), val, config)
        self.trained_ = trained
        self.thresholds_ = trained.thresholds
        return self

    def predict_proba(self, X) -> np.ndarray:
        from .classify import predict_proba
        return predict_proba(self.trained_.encoder_params, self.trained_.head, list(X))

    def predict(self, X) -> np.ndarray:
        scores = self.predict_proba(X)
        return (scores >= self.thresholds_[None, :]).astype(int)

    def score(self, X, Y) -> float:
        from .metrics import precision_f1
        _, f1 = precision_f1(self.predict(X), np.asarray(Y, dtype=int))
        return f1
