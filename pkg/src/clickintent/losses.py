"""Training objectives over query embeddings, with analytic gradients.

All losses operate on plain numpy arrays so they can be checked against
central finite differences independently of the encoder. Set-based losses
take a list of :class:`EmbeddedSet` (one per co-query document set) and
return ``(value, grads)`` where ``grads`` mirrors the embedding layout.

Sum order is fixed (set index, then member index) so repeated evaluations
are bit-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

E_CONST = math.e


@dataclass
class LossConfig:
    """Numerical guards for the set-based losses.

    epsilon keeps the reciprocal terms finite, norm_floor guards the
    cosine against zero vectors, and cosine_clamp caps the cosine fed
    into the exp so a member perfectly aligned with its centroid cannot
    blow the term up to 1/epsilon.
    """

    epsilon: float = 1e-6
    norm_floor: float = 1e-12
    cosine_clamp: float = 1.0 - 1e-6
    leave_one_out: bool = False


@dataclass
class EmbeddedSet:
    """Embeddings and normalized weights for one document set."""

    embeddings: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,), sums to 1
    set_id: str = ""

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a (N, d) matrix")
        if self.weights.shape != (self.embeddings.shape[0],):
            raise ValueError("weights length must match number of embeddings")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


def cosine(u: np.ndarray, v: np.ndarray, norm_floor: float = 1e-12) -> float:
    """Cosine similarity with norms clamped at norm_floor."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = max(float(np.linalg.norm(u)), norm_floor)
    nv = max(float(np.linalg.norm(v)), norm_floor)
    return float(np.dot(u, v)) / (nu * nv)


def _cosine_with_grad(u, v, norm_floor):
    """Returns (cos, dcos/du, dcos/dv); norms below the floor are constant."""
    nu_raw = float(np.linalg.norm(u))
    nv_raw = float(np.linalg.norm(v))
    nu = max(nu_raw, norm_floor)
    nv = max(nv_raw, norm_floor)
    dot = float(np.dot(u, v))
    c = dot / (nu * nv)
    du = v / (nu * nv)
    dv = u / (nu * nv)
    if nu_raw > norm_floor:
        du = du - (c / (nu * nu)) * u
    if nv_raw > norm_floor:
        dv = dv - (c / (nv * nv)) * v
    return c, du, dv


def _recip_term(c: float, cfg: LossConfig):
    """The 1 / (1 - exp(cos)/e + eps) term and its d/dcos.

    The cosine is clamped at cfg.cosine_clamp before the exp; past the
    clamp the derivative is 0.
    """
    clamped = min(c, cfg.cosine_clamp)
    denom = 1.0 - math.exp(clamped) / E_CONST + cfg.epsilon
    t = 1.0 / denom
    if c < cfg.cosine_clamp:
        dt_dc = (math.exp(clamped) / E_CONST) / (denom * denom)
    else:
        dt_dc = 0.0
    return t, dt_dc


def pairwise_loss(queries: np.ndarray, positives: np.ndarray, negatives: np.ndarray,
                  config: LossConfig | None = None):
    """Co-click pairwise loss over (q, q+, q-) embedding triples.

    Each triple contributes sigma(cos(q, q+)) - sigma(cos(q, q-)) with
    sigma(x) = 1 / (1 + exp(x)).  Returns the summed value and gradients
    w.r.t. all three embedding matrices.
    """
    cfg = config or LossConfig()
    queries = np.asarray(queries, dtype=float)
    positives = np.asarray(positives, dtype=float)
    negatives = np.asarray(negatives, dtype=float)
    if queries.ndim == 1:
        queries = queries[None, :]
        positives = positives[None, :]
        negatives = negatives[None, :]
    if queries.shape[0] == 0:
        raise ValueError("empty batch")
    if not (queries.shape == positives.shape == negatives.shape):
        raise ValueError("triple matrices must share one shape")

    total = 0.0
    dq = np.zeros_like(queries)
    dp = np.zeros_like(positives)
    dn = np.zeros_like(negatives)
    for b in range(queries.shape[0]):
        cp, dcp_dq, dcp_dp = _cosine_with_grad(queries[b], positives[b], cfg.norm_floor)
        cn, dcn_dq, dcn_dn = _cosine_with_grad(queries[b], negatives[b], cfg.norm_floor)
        sp = 1.0 / (1.0 + math.exp(cp))
        sn = 1.0 / (1.0 + math.exp(cn))
        total += sp - sn
        # d sigma / dx = -sigma (1 - sigma)
        gp = -sp * (1.0 - sp)
        gn = sn * (1.0 - sn)
        dq[b] = gp * dcp_dq + gn * dcn_dq
        dp[b] = gp * dcp_dp
        dn[b] = gn * dcn_dn
    return total, (dq, dp, dn)


def _centroid(embeddings: np.ndarray) -> np.ndarray:
    return embeddings.mean(axis=0)


def _set_vs_centroid(src: EmbeddedSet, centroid_set: EmbeddedSet, cfg: LossConfig,
                     grads: list[np.ndarray], src_idx: int, cen_idx: int,
                     exclude_self: bool):
    """Accumulates (1/N_src) sum_j w_j * recip(cos(E_j, C)) and its gradient.

    Used for both the intra term (src is the centroid's own set) and the
    inter terms.  Gradients flow into the source embeddings directly and
    into the centroid set's members through the mean.
    """
    n_src = src.size
    n_cen = centroid_set.size
    value = 0.0
    for j in range(n_src):
        if exclude_self and n_cen > 1:
            mask = np.ones(n_cen, dtype=bool)
            mask[j] = False
            cen = centroid_set.embeddings[mask].mean(axis=0)
        else:
            mask = None
            cen = _centroid(centroid_set.embeddings)
        c, dc_de, dc_dcen = _cosine_with_grad(src.embeddings[j], cen, cfg.norm_floor)
        t, dt_dc = _recip_term(c, cfg)
        coef = src.weights[j] / n_src
        value += coef * t
        scale = coef * dt_dc
        grads[src_idx][j] += scale * dc_de
        if mask is None:
            grads[cen_idx] += (scale / n_cen) * dc_dcen[None, :]
        else:
            grads[cen_idx][mask] += (scale / (n_cen - 1)) * dc_dcen[None, :]
    return value


def intra_loss(sets: list[EmbeddedSet], config: LossConfig | None = None):
    """Within-set cohesion term (sum over sets of weighted reciprocal terms).

    Each member is compared to its own set centroid; by default the
    centroid includes the member itself (leave_one_out excludes it).
    """
    cfg = config or LossConfig()
    for s in sets:
        if s.size < 2:
            raise ValueError(f"singleton set {s.set_id!r} reached intra_loss")
    grads = [np.zeros_like(s.embeddings) for s in sets]
    value = 0.0
    for i, s in enumerate(sets):
        value += _set_vs_centroid(s, s, cfg, grads, i, i, cfg.leave_one_out)
    return value, grads


def recip_term(cos_value: float, config: LossConfig | None = None) -> float:
    """Closed-form inner term 1 / (1 - exp(cos)/e + eps) of the set losses."""
    return _recip_term(cos_value, config or LossConfig())[0]


def inter_loss(sets: list[EmbeddedSet], config: LossConfig | None = None):
    """Cross-set term: members of set i against the centroid of set j != i."""
    cfg = config or LossConfig()
    if len(sets) < 2:
        raise ValueError("inter_loss needs at least 2 sets")
    grads = [np.zeros_like(s.embeddings) for s in sets]
    value = 0.0
    for i, s in enumerate(sets):
        for j, other in enumerate(sets):
            if j == i:
                continue
            value += _set_vs_centroid(s, other, cfg, grads, i, j, False)
    return value, grads


def multiset_loss(sets: list[EmbeddedSet], config: LossConfig | None = None):
    """-log(intra / inter); minimizing pulls sets together and pushes them apart."""
    cfg = config or LossConfig()
    v_intra, g_intra = intra_loss(sets, cfg)
    v_inter, g_inter = inter_loss(sets, cfg)
    assert v_intra > 0.0 and v_inter > 0.0, "reciprocal terms must stay positive"
    value = -math.log(v_intra / v_inter)
    grads = [(-ga / v_intra) + (ge / v_inter) for ga, ge in zip(g_intra, g_inter)]
    return value, grads


def bce_loss(y: np.ndarray, y_hat: np.ndarray, prob_floor: float = 1e-7):
    """Mean binary cross-entropy over labels (natural log).

    Probabilities are clamped into [prob_floor, 1 - prob_floor]; the
    gradient is zero where the clamp is active.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    p = np.clip(y_hat, prob_floor, 1.0 - prob_floor)
    n = y.size
    value = float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum() / n)
    grad = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
    grad = np.where((y_hat > prob_floor) & (y_hat < 1.0 - prob_floor), grad, 0.0)
    return value, grad


def bce_with_logits(y: np.ndarray, logits: np.ndarray):
    """BCE evaluated from logits; numerically stable, grad w.r.t. logits."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(logits, dtype=float)
    if y.shape != z.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {z.shape}")
    n = y.size
    value = float((np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n)
    p = 1.0 / (1.0 + np.exp(-z))
    return value, (p - y) / n


# ---------------------------------------------------------------------------
# Complexity benchmark
# ---------------------------------------------------------------------------

def _pairwise_value_all_pairs(embs: list[np.ndarray], rng: np.random.Generator) -> float:
    """Value-only pairwise loss enumerating all ordered within-set pairs.

    One random cross-set negative per positive pair, i.e. the O(K * N^2)
    regime the multiset loss is compared against.
    """
    normed = []
    for e in embs:
        norms = np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
        normed.append(e / norms)
    all_rows = np.vstack(normed)
    offsets = np.cumsum([0] + [e.shape[0] for e in embs])
    total = 0.0
    for i, s in enumerate(normed):
        n = s.shape[0]
        if n < 2:
            continue
        pos_cos = s @ s.T
        # negatives: uniform over rows outside this set
        neg_idx = rng.integers(0, all_rows.shape[0] - n, size=(n, n))
        neg_idx = np.where(neg_idx >= offsets[i], neg_idx + n, neg_idx)
        neg_cos = np.einsum("ijk,ik->ij", all_rows[neg_idx], s)
        mask = ~np.eye(n, dtype=bool)
        total += float((1.0 / (1.0 + np.exp(pos_cos[mask]))).sum()
                       - (1.0 / (1.0 + np.exp(neg_cos[mask]))).sum())
    return total


def _multiset_value_fast(embs: list[np.ndarray], weights: list[np.ndarray],
                         cfg: LossConfig) -> float:
    """Vectorized value-only multiset loss (O(K^2 * N) cosine evaluations)."""
    cents = np.stack([e.mean(axis=0) for e in embs])
    cent_norms = np.maximum(np.linalg.norm(cents, axis=1), cfg.norm_floor)
    v_intra = 0.0
    v_inter = 0.0
    for i, e in enumerate(embs):
        norms = np.maximum(np.linalg.norm(e, axis=1), cfg.norm_floor)
        cos_all = (e @ cents.T) / norms[:, None] / cent_norms[None, :]
        cos_all = np.minimum(cos_all, cfg.cosine_clamp)
        terms = 1.0 / (1.0 - np.exp(cos_all) / E_CONST + cfg.epsilon)
        wterms = weights[i][:, None] * terms / e.shape[0]
        v_intra += float(wterms[:, i].sum())
        v_inter += float(wterms.sum() - wterms[:, i].sum())
    return -math.log(v_intra / v_inter)


@dataclass
class BenchRow:
    loss: str
    k: int
    n: int
    median_seconds: float


def bench_complexity(k_values=(4,), n_values=(100, 200, 400), trials=5,
                     dim=32, seed=0, config: LossConfig | None = None,
                     min_time=0.02) -> list[BenchRow]:
    """Median wall time per evaluation of multiset vs pairwise loss.

    Each (loss, K, N) cell is timed `trials` times; within a trial the
    evaluation is repeated until at least `min_time` seconds elapse so
    tiny instances are not dominated by timer noise.
    """
    cfg = config or LossConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for k in k_values:
        for n in n_values:
            embs = [rng.normal(size=(n, dim)) for _ in range(k)]
            weights = [np.full(n, 1.0 / n) for _ in range(k)]
            for name in ("multiset", "pairwise"):
                if name == "multiset":
                    fn = lambda: _multiset_value_fast(embs, weights, cfg)
                else:
                    fn = lambda: _pairwise_value_all_pairs(embs, rng)
                fn()  # warm up
                reps = 1
                while True:
                    t0 = time.perf_counter()
                    for _ in range(reps):
                        fn()
                    if time.perf_counter() - t0 >= min_time:
                        break
                    reps *= 2
                times = []
                for _ in range(trials):
                    t0 = time.perf_counter()
                    for _ in range(reps):
                        fn()
                    times.append((time.perf_counter() - t0) / reps)
                rows.append(BenchRow(name, k, n, float(np.median(times))))
    return rows


def bench_table(rows: list[BenchRow]) -> str:
    lines = [f"{'loss':<10}{'K':>4}{'N':>6}{'median_s':>14}"]
    for r in rows:
        lines.append(f"{r.loss:<10}{r.k:>4}{r.n:>6}{r.median_seconds:>14.6g}")
    return "\n".join(lines)


def bench_csv(rows: list[BenchRow]) -> str:
    out = ["loss,k,n,median_seconds"]
    out += [f"{r.loss},{r.k},{r.n},{r.median_seconds:.9g}" for r in rows]
    return "\n".join(out) + "\n"
