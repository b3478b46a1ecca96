"""Co-query set extraction: group queries by clicked document key.

Queries that lead to clicks on the same document type (or URL pattern)
form one DocumentSet; per-query weights are click-count shares within
the set. Sets with a single member are kept in the corpus (they still
carry label signal) but are never sampled into loss batches.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .clicklog import ClickEvent, url_path

WEIGHT_TOL = 1e-9

# min_clicks semantics follow "aggregated click count >= min_clicks";
# 3 matches a "greater than 2" filter, 6 a "greater than 5" one.
MIN_CLICKS_HS = 3
MIN_CLICKS_TRIPCLICK = 6


@dataclass(frozen=True)
class SetMember:
    query: str
    count: int
    weight: float


@dataclass(frozen=True)
class DocumentSet:
    set_id: str
    members: tuple[SetMember, ...]

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def queries(self) -> list[str]:
        return [m.query for m in self.members]

    @property
    def weights(self) -> list[float]:
        return [m.weight for m in self.members]


def compute_weights(set_id: str, counts: list[tuple[str, int]]) -> DocumentSet:
    """Build a DocumentSet with click-share weights w = count / sum(counts)."""
    if not counts:
        raise ValueError("empty set")
    seen = set()
    for query, count in counts:
        if count < 1:
            raise ValueError(f"count for {query!r} must be >= 1")
        if query in seen:
            raise ValueError(f"duplicate query {query!r} in set {set_id!r}")
        seen.add(query)
    total = sum(c for _, c in counts)
    members = tuple(SetMember(q, c, c / total) for q, c in counts)
    return DocumentSet(set_id=set_id, members=members)


@dataclass
class CoQueryCorpus:
    sets: list[DocumentSet]

    def __post_init__(self):
        self.query_index: dict[str, list[tuple[str, float]]] = {}
        for s in self.sets:
            for m in s.members:
                self.query_index.setdefault(m.query, []).append((s.set_id, m.weight))

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def eligible_sets(self, min_members: int = 2) -> list[DocumentSet]:
        return [s for s in self.sets if s.n_members >= min_members]


def extract_sets(events: list[ClickEvent], min_clicks: int = 1,
                 key: str = "doc_type") -> CoQueryCorpus:
    """Aggregate clicks per (key, query) and keep pairs with count >= min_clicks.

    key "doc_type" groups by the clicked document's type; "url_pattern"
    groups by the first path segment of the clicked URL.
    """
    if min_clicks < 1:
        raise ValueError("min_clicks must be >= 1")
    if key not in ("doc_type", "url_pattern"):
        raise ValueError(f"unknown grouping key {key!r}")
    counts: dict[str, dict[str, int]] = {}
    for e in events:
        if key == "doc_type":
            k = e.doc_type
        else:
            segments = [p for p in url_path(e.doc_url).split("/") if p]
            k = segments[0] if segments else ""
        counts.setdefault(k, {})
        counts[k][e.query] = counts[k].get(e.query, 0) + e.click_count
    sets = []
    for k in sorted(counts):
        retained = [(q, c) for q, c in sorted(counts[k].items()) if c >= min_clicks]
        if retained:
            sets.append(compute_weights(k, retained))
    return CoQueryCorpus(sets=sets)


@dataclass
class SampledSet:
    set_id: str
    queries: list[str]
    weights: list[float]  # renormalized over the sampled subset


def batch_sample(corpus: CoQueryCorpus, sets_per_batch: int, queries_per_set: int,
                 seed: int) -> list[SampledSet]:
    """Sample a training batch: B distinct multi-member sets, up to M queries each.

    Queries are drawn weight-proportionally without replacement; subset
    weights are renormalized to sum 1. Deterministic per seed.
    """
    if sets_per_batch < 2:
        raise ValueError("sets_per_batch must be >= 2")
    eligible = corpus.eligible_sets()
    if len(eligible) < sets_per_batch:
        raise ValueError(f"need {sets_per_batch} sets with >= 2 members, "
                         f"have {len(eligible)}")
    rng = random.Random(seed)
    chosen = rng.sample(eligible, sets_per_batch)
    batch = []
    for s in chosen:
        pool = list(s.members)
        picked: list[SetMember] = []
        while pool and len(picked) < queries_per_set:
            weights = [m.weight for m in pool]
            m = rng.choices(pool, weights=weights, k=1)[0]
            pool.remove(m)
            picked.append(m)
        total = sum(m.weight for m in picked)
        batch.append(SampledSet(set_id=s.set_id,
                                queries=[m.query for m in picked],
                                weights=[m.weight / total for m in picked]))
    return batch


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------

def save_corpus(corpus: CoQueryCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus.sets:
            record = {"set_id": s.set_id,
                      "members": [{"query": m.query, "count": m.count,
                                   "weight": m.weight} for m in s.members]}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path) -> CoQueryCorpus:
    sets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            members = tuple(SetMember(m["query"], int(m["count"]), float(m["weight"]))
                            for m in record["members"])
            sets.append(DocumentSet(set_id=record["set_id"], members=members))
    return CoQueryCorpus(sets=sets)
