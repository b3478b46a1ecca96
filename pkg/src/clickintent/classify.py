"""Multi-label intent classification head and session-context inputs.

The head is one dense logit per intent over the encoder output, trained
with mean binary cross-entropy. Session-based classification feeds the
same encoder a concatenated token sequence: current query, previous
queries (newest first), clicked-document annotations, page contexts,
separated by [CLS]/[SEP] markers. Ablation flags drop each context
source independently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .clicklog import Session
from .losses import bce_with_logits
from .metrics import precision_f1

THRESHOLD_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


@dataclass
class ClassifierHead:
    w: np.ndarray  # (I, d)
    b: np.ndarray  # (I,)

    @classmethod
    def init(cls, n_intents: int, dim: int) -> "ClassifierHead":
        # zero init: an untrained head scores every intent at sigmoid(0) = 0.5
        return cls(w=np.zeros((n_intents, dim)), b=np.zeros(n_intents))

    @property
    def n_intents(self) -> int:
        return self.w.shape[0]

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.w.copy(), self.b.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


def head_logits(head: ClassifierHead, embeddings: np.ndarray) -> np.ndarray:
    return np.atleast_2d(embeddings) @ head.w.T + head.b


def predict_proba(params: enc.EncoderParams, head: ClassifierHead,
                  inputs) -> np.ndarray:
    """Sigmoid per-intent probabilities for raw queries or session inputs."""
    if isinstance(inputs, str):
        inputs = [inputs]
    embeddings, _ = enc.encode_batch(params, list(inputs))
    return 1.0 / (1.0 + np.exp(-head_logits(head, embeddings)))


def select_thresholds(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-label decision threshold maximizing F1 over a fixed grid.

    Ties prefer the lower threshold; labels with no positive validation
    sample fall back to 0.5 with a warning.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.size == 0:
        raise ValueError("empty validation set")
    thresholds = np.full(scores.shape[1], 0.5)
    for i in range(scores.shape[1]):
        y = labels[:, i]
        if not y.any():
            warnings.warn(f"label {i} absent from validation; threshold left at 0.5")
            continue
        best_f1, best_tau = -1.0, 0.5
        for tau in THRESHOLD_GRID:
            pred = (scores[:, i] >= tau).astype(int)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, f1 = precision_f1(pred[:, None], y[:, None])
            if f1 > best_f1:
                best_f1, best_tau = f1, tau
        thresholds[i] = best_tau
    return thresholds


@dataclass(frozen=True)
class ContextConfig:
    prev_queries: bool = True
    annotations: bool = True
    page_context: bool = True

    @classmethod
    def preset(cls, name: str) -> "ContextConfig":
        presets = {
            "none": cls(False, False, False),
            "prev-query": cls(True, False, False),
            "page": cls(False, False, True),
            "all": cls(True, True, True),
        }
        if name not in presets:
            raise ValueError(f"unknown context preset {name!r}")
        return presets[name]


def assemble_session_input(session: Session, step_index: int,
                           max_tokens: int = 64,
                           context: ContextConfig = ContextConfig()) -> str:
    """Concatenated classifier input for the query at step_index (1-based).

    Field order: [CLS] current query, [SEP]-joined previous queries newest
    first, then previous clicked-doc annotations, then page contexts.
    Over-long inputs are truncated from the tail; [CLS] and the current
    query always survive.
    """
    n = len(session)
    if not (1 <= step_index <= n):
        raise IndexError(f"step_index {step_index} out of range 1..{n}")
    steps = session.steps
    current = steps[step_index - 1]
    previous = list(reversed(steps[:step_index - 1]))

    parts = [current.query]
    if context.prev_queries:
        parts.extend(s.query for s in previous)
    if context.annotations:
        parts.extend(s.annotation for s in previous)
    if context.page_context:
        parts.extend(s.page_context for s in previous if s.page_context)

    pieces = ["[CLS]"] + parts[0].split()
    budget = max_tokens - len(pieces)
    for part in parts[1:]:
        toks = part.split()
        if budget < len(toks) + 1:
            break
        pieces.append("[SEP]")
        pieces.extend(toks)
        budget -= len(toks) + 1
    return " ".join(pieces)


@dataclass
class ClassifierConfig:
    lr: float = 0.2
    epochs: int = 150
    batch_size: int = 64
    patience: int = 5
    freeze_encoder: bool = True
    encoder_lr: float = 1e-3
    seed: int = 0


@dataclass
class TrainedClassifier:
    head: ClassifierHead
    thresholds: np.ndarray
    encoder_params: enc.EncoderParams
    history: list[dict] = field(default_factory=list)
    best_val_f1: float = 0.0


def train_classifier(params: enc.EncoderParams, train_set, val_set,
                     config: ClassifierConfig = ClassifierConfig()) -> TrainedClassifier:
    """Fit the per-intent head with Adam on BCE; early stop on validation F1.

    train_set/val_set are lists of (input_text, label_vector). The encoder
    is frozen by default; with freeze_encoder=False it is co-trained at
    encoder_lr.
    """
    if not train_set:
        raise ValueError("empty training split")
    texts = [t for t, _ in train_set]
    y_train = np.array([y for _, y in train_set], dtype=float)
    val_texts = [t for t, _ in val_set]
    y_val = np.array([y for _, y in val_set], dtype=int) if val_set else None

    params = params if config.freeze_encoder else params.copy()
    n_intents = y_train.shape[1]
    head = ClassifierHead.init(n_intents, params.dim)
    head_state = enc.AdamState.init(head.arrays())
    enc_state = None if config.freeze_encoder else enc.AdamState.init(params)

    # With a frozen encoder the head trains on standardized features (the
    # toy encoder's raw outputs vary on a tiny scale around its bias); the
    # standardization is folded back into the head weights on return so
    # predict_proba stays a plain sigmoid over the encoder output.
    features = val_features = None
    mu = np.zeros(params.dim)
    sigma = np.ones(params.dim)
    if config.freeze_encoder:
        features, _ = enc.encode_batch(params, texts)
        mu = features.mean(axis=0)
        sigma = np.maximum(features.std(axis=0), 1e-8)
        features = (features - mu) / sigma
        if val_texts:
            val_features, _ = enc.encode_batch(params, val_texts)
            val_features = (val_features - mu) / sigma

    rng = np.random.default_rng(config.seed)
    best = TrainedClassifier(head.copy(), np.full(n_intents, 0.5), params)
    best_f1, stale = -1.0, 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(texts))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if config.freeze_encoder:
                embs = features[idx]
            else:
                embs, batch_caches = enc.encode_batch(params, [texts[i] for i in idx])
            logits = head_logits(head, embs)
            loss, dz = bce_with_logits(y_train[idx], logits)
            epoch_loss += loss * len(idx)
            grads = {"w": dz.T @ embs, "b": dz.sum(axis=0)}
            if not config.freeze_encoder:
                d_emb = dz @ head.w
                enc_grads = enc.backward(params, batch_caches, d_emb)
                enc.adam_step(params.arrays(), enc_grads, enc_state,
                              lr=config.encoder_lr)
            enc.adam_step(head.arrays(), grads, head_state, lr=config.lr)

        record = {"epoch": epoch, "train_loss": epoch_loss / len(texts)}
        if y_val is not None and len(val_texts):
            if config.freeze_encoder:
                val_scores = 1.0 / (1.0 + np.exp(-head_logits(head, val_features)))
            else:
                val_scores = predict_proba(params, head, val_texts)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, val_f1 = precision_f1((val_scores >= 0.5).astype(int), y_val)
            record["val_f1"] = val_f1
            if val_f1 > best_f1 + 1e-12:
                best_f1, stale = val_f1, 0
                best.head = head.copy()
                best.encoder_params = params if config.freeze_encoder else params.copy()
            else:
                stale += 1
        best.history.append(record)
        if y_val is not None and stale > config.patience:
            break

    if y_val is None or not len(val_texts):
        best.head = head.copy()
        best.encoder_params = params
        best.thresholds = np.full(n_intents, 0.5)
        if config.freeze_encoder:
            best.head = _fold_standardization(best.head, mu, sigma)
        return best

    if config.freeze_encoder:
        best.head = _fold_standardization(best.head, mu, sigma)
    val_scores = predict_proba(best.encoder_params, best.head, val_texts)
    best.thresholds = select_thresholds(val_scores, y_val)
    best.best_val_f1 = max(best_f1, 0.0)
    return best


def _fold_standardization(head: ClassifierHead, mu: np.ndarray,
                          sigma: np.ndarray) -> ClassifierHead:
    """Rewrite a head trained on (E - mu) / sigma to act on raw embeddings."""
    w = head.w / sigma[None, :]
    b = head.b - w @ mu
    return ClassifierHead(w=w, b=b)
