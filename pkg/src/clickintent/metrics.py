"""Clustering and multi-label classification metrics, plus the stratified split.

ARI/NMI use the standard contingency-table forms with explicit degenerate
conventions (both-single-cluster ARI is 1; zero-entropy NMI is 0 unless
the partitions are identical). Precision/F1 are micro-averaged over
(query, label) pairs by default. Ranking metrics break score ties by
taxonomy index (stable).
"""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans


def kmeans(embeddings: np.ndarray, k: int, restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Best-inertia k-means partition over `restarts` seeded inits."""
    embeddings = np.asarray(embeddings, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > embeddings.shape[0]:
        raise ValueError(f"k={k} exceeds {embeddings.shape[0]} items")
    model = KMeans(n_clusters=k, n_init=restarts, random_state=seed, init="k-means++")
    return model.fit_predict(embeddings)


def _contingency(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("partitions must have the same item count")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _comb2(x):
    return x * (x - 1) / 2.0


def ari(pred: np.ndarray, truth: np.ndarray) -> float:
    """Adjusted Rand index; returns 1 for two trivial identical partitions."""
    table = _contingency(pred, truth)
    n = table.sum()
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / _comb2(n) if n >= 2 else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        # both partitions trivial (all one cluster, or all singletons)
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred: np.ndarray, truth: np.ndarray) -> float:
    """Normalized mutual information, arithmetic-mean normalization."""
    table = _contingency(pred, truth)
    n = table.sum()
    h_pred = _entropy_from_counts(table.sum(axis=1))
    h_truth = _entropy_from_counts(table.sum(axis=0))
    if h_pred == 0.0 or h_truth == 0.0:
        pred_i = np.unique(pred, return_inverse=True)[1]
        truth_i = np.unique(truth, return_inverse=True)[1]
        return 1.0 if np.array_equal(pred_i, truth_i) else 0.0
    mi = 0.0
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij > 0:
                mi += (nij / n) * math.log(n * nij / (rows[i] * cols[j]))
    return float(mi / ((h_pred + h_truth) / 2.0))


def precision_f1(pred: np.ndarray, truth: np.ndarray, average: str = "micro"):
    """(precision, f1) over binary multi-label matrices (n, I)."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("prediction/truth shape mismatch")
    if pred.size == 0:
        raise ValueError("empty dataset")
    if average == "micro":
        return _prf(pred.ravel(), truth.ravel())
    if average == "macro":
        pairs = [_prf(pred[:, i], truth[:, i]) for i in range(pred.shape[1])]
        return (float(np.mean([p for p, _ in pairs])),
                float(np.mean([f for _, f in pairs])))
    raise ValueError(f"unknown average {average!r}")


def _prf(pred: np.ndarray, truth: np.ndarray):
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    if tp + fp == 0:
        warnings.warn("no predicted positives; precision defined as 0")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return precision, f1


def _top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated scores: ties resolved by lower label index
    return np.argsort(-scores, kind="stable")[:k]


def hit_rate_3(scores: np.ndarray, truth: np.ndarray, k: int = 3) -> float:
    """Fraction of samples with any true label in the top-k predictions."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    k = min(k, scores.shape[1])
    hits = 0
    for s, t in zip(scores, truth):
        top = _top_k_indices(s, k)
        hits += int(t[top].any())
    return hits / len(scores)


def ndcg_3(scores: np.ndarray, truth: np.ndarray, k: int = 3):
    """Mean NDCG@k with binary relevance; zero-relevant samples are excluded.

    Returns (ndcg, n_excluded).
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    k = min(k, scores.shape[1])
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    vals = []
    excluded = 0
    for s, t in zip(scores, truth):
        n_rel = int(t.sum())
        if n_rel == 0:
            excluded += 1
            continue
        top = _top_k_indices(s, k)
        dcg = float((t[top] * discounts).sum())
        idcg = float(discounts[:min(n_rel, k)].sum())
        vals.append(dcg / idcg)
    if excluded:
        warnings.warn(f"{excluded} samples with no relevant labels excluded from NDCG")
    return (float(np.mean(vals)) if vals else 0.0), excluded


@dataclass
class MetricReport:
    precision: float = float("nan")
    f1: float = float("nan")
    hit_rate_3: float = float("nan")
    ndcg_3: float = float("nan")
    ari: float = float("nan")
    nmi: float = float("nan")
    support: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        # NaN marks "not computed"; dropped so the JSON stays strict
        values = {"precision": self.precision, "f1": self.f1,
                  "hit_rate_3": self.hit_rate_3, "ndcg_3": self.ndcg_3,
                  "ari": self.ari, "nmi": self.nmi}
        out = {k: v for k, v in values.items() if not math.isnan(v)}
        out["support"] = self.support
        return out

    def format_table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items()
                if k != "support" and not math.isnan(v)]
        width = max((len(k) for k, _ in rows), default=6)
        return "\n".join(f"{k:<{width}}  {v:.4f}" for k, v in rows)


def classification_report(scores: np.ndarray, thresholds: np.ndarray,
                          truth: np.ndarray) -> MetricReport:
    """MetricReport from probability scores, decision thresholds, and truth."""
    decided = (np.asarray(scores) >= np.asarray(thresholds)[None, :]).astype(int)
    precision, f1 = precision_f1(decided, truth)
    hr = hit_rate_3(scores, truth)
    nd, excluded = ndcg_3(scores, truth)
    return MetricReport(precision=precision, f1=f1, hit_rate_3=hr, ndcg_3=nd,
                        support={"n_samples": int(len(truth)),
                                 "n_labels": int(truth.shape[1]),
                                 "ndcg_excluded": excluded})


# ---------------------------------------------------------------------------
# Stratified multi-label split
# ---------------------------------------------------------------------------

def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [int(math.floor(q)) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    for i in sorted(range(len(ratios)), key=lambda i: -remainders[i]):
        if sum(counts) == n:
            break
        counts[i] += 1
    return counts


def stratified_split(items: list, labels: list[np.ndarray],
                     ratios=(0.6, 0.2, 0.2), min_group: int = 3, seed: int = 0):
    """Split by exact label combination into (train, val, test).

    Groups with >= min_group samples are divided per the ratios with
    largest-remainder rounding; rarer combinations go entirely to test.
    Deterministic per seed; splits are disjoint and cover the input.
    """
    if not items:
        raise ValueError("empty input")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    groups: dict[tuple, list] = {}
    for item, y in zip(items, labels):
        groups.setdefault(tuple(np.asarray(y).astype(int)), []).append(item)
    rng = random.Random(seed)
    train, val, test = [], [], []
    for key in sorted(groups):
        members = list(groups[key])
        if len(members) < min_group:
            test.extend(members)
            continue
        rng.shuffle(members)
        n_train, n_val, _ = _largest_remainder(len(members), ratios)
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return train, val, test


def paired_ttest_one_sided(a, b):
    """One-sided paired t-test for mean(a) > mean(b); returns (t, p)."""
    t, p = stats.ttest_rel(a, b)
    if math.isnan(t):
        return float("nan"), float("nan")
    p_one_sided = p / 2.0 if t > 0 else 1.0 - p / 2.0
    return float(t), float(p_one_sided)
