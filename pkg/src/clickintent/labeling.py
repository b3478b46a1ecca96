"""Weak-supervision intent labeling from URL patterns and click mass.

Clicked URLs are routed to intents through an ordered rule list (first
matching regex wins, unmatched mass falls through to "all_others"); an
intent is switched on when it receives at least a threshold share of the
query's click mass. Perplexity (2^entropy of the click-derived intent
distribution) quantifies query ambiguity, and the concordance rate
measures agreement between global and session-inferred intents.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .clicklog import Session

FALLBACK_INTENT = "all_others"

# Taxonomy for health-search style corpora; order fixes label indices.
HS_INTENTS = ("access_records", "account_mgmt", "appointment",
              "bill_cost_coverage", "communication", "drug_info",
              "health_wellness", "provider", "facility", "health_class",
              "health_plan", "job_search", "support", "all_others")

DEFAULT_MULTI_LABEL_THRESHOLD = 0.2


@dataclass(frozen=True)
class IntentTaxonomy:
    intents: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.intents)) != len(self.intents):
            raise ValueError("intent names must be unique")

    @property
    def size(self) -> int:
        return len(self.intents)

    def index(self, name: str) -> int:
        return self.intents.index(name)

    def names(self, y: np.ndarray) -> list[str]:
        return [n for n, bit in zip(self.intents, y) if bit]

    def vector(self, names) -> np.ndarray:
        y = np.zeros(self.size, dtype=int)
        for n in names:
            y[self.index(n)] = 1
        return y


HS_TAXONOMY = IntentTaxonomy(HS_INTENTS)


@dataclass(frozen=True)
class IntentRule:
    intent: str
    pattern: str

    def __post_init__(self):
        object.__setattr__(self, "_compiled", re.compile(self.pattern))

    def matches(self, url: str) -> bool:
        return self._compiled.search(url) is not None


def load_rules(path) -> list[IntentRule]:
    """Rules file: JSON list of {intent, pattern}, in priority order."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [IntentRule(r["intent"], r["pattern"]) for r in raw]


def save_rules(rules: list[IntentRule], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([{"intent": r.intent, "pattern": r.pattern} for r in rules],
                  fh, indent=2)


def route_url(url: str, rules: list[IntentRule]) -> str:
    """First matching rule's intent; unmatched URLs go to the fallback."""
    for r in rules:
        if r.matches(url):
            return r.intent
    return FALLBACK_INTENT


def _intent_mass(click_stats: dict[str, float], rules: list[IntentRule],
                 taxonomy: IntentTaxonomy) -> np.ndarray:
    mass = np.zeros(taxonomy.size)
    for url, count in click_stats.items():
        mass[taxonomy.index(route_url(url, rules))] += count
    return mass


def label_query(click_stats: dict[str, float], rules: list[IntentRule],
                taxonomy: IntentTaxonomy = HS_TAXONOMY,
                multi_label_threshold: float = DEFAULT_MULTI_LABEL_THRESHOLD) -> np.ndarray:
    """Multi-label vector: intents holding >= threshold of click mass.

    If no intent reaches the threshold the argmax intent is used (ties
    resolved by taxonomy order), so labeled queries always carry >= 1 label.
    """
    if not rules:
        raise ValueError("rules must be non-empty")
    if not click_stats:
        raise ValueError("click_stats must be non-empty")
    mass = _intent_mass(click_stats, rules, taxonomy)
    total = mass.sum()
    y = (mass / total >= multi_label_threshold).astype(int)
    if multi_label_threshold >= 1.0 or not y.any():
        y = np.zeros(taxonomy.size, dtype=int)
        y[int(np.argmax(mass))] = 1
    return y


def intent_distribution(click_stats: dict[str, float], rules: list[IntentRule],
                        taxonomy: IntentTaxonomy = HS_TAXONOMY) -> np.ndarray:
    """P(label_i) = click mass routed to intent i / total click mass."""
    mass = _intent_mass(click_stats, rules, taxonomy)
    total = mass.sum()
    if total <= 0:
        raise ValueError("total click mass must be >= 1")
    return mass / total


def perplexity(dist: np.ndarray, tol: float = 1e-9) -> float:
    """2^entropy of an intent distribution; 0*log(0) taken as 0."""
    dist = np.asarray(dist, dtype=float)
    if np.any(dist < -tol) or abs(dist.sum() - 1.0) > tol:
        raise ValueError("input is not a normalized distribution")
    p = dist[dist > 0]
    entropy = float(-(p * np.log2(p)).sum())
    return 2.0 ** entropy


def session_inferred_intent(step, rules: list[IntentRule],
                            taxonomy: IntentTaxonomy = HS_TAXONOMY) -> np.ndarray:
    """Intent of the document clicked at this step, via the URL rules."""
    intent = route_url(step.event.doc_url, rules)
    return taxonomy.vector([intent])


def concordance_rate(session: Session, global_intents: dict[str, np.ndarray],
                     rules: list[IntentRule],
                     taxonomy: IntentTaxonomy = HS_TAXONOMY,
                     mode: str = "exact") -> float:
    """Fraction of steps whose session-inferred intent matches the global one.

    "exact" compares label sets for equality; "jaccard" averages the
    intersection-over-union overlap instead.
    """
    if len(session) == 0:
        raise ValueError("empty session")
    if mode not in ("exact", "jaccard"):
        raise ValueError(f"unknown mode {mode!r}")
    total = 0.0
    for step in session.steps:
        g = np.asarray(global_intents[step.query])
        s = session_inferred_intent(step, rules, taxonomy)
        if mode == "exact":
            total += float(np.array_equal(g, s))
        else:
            inter = int(np.minimum(g, s).sum())
            union = int(np.maximum(g, s).sum())
            total += inter / union if union else 1.0
    return total / len(session)


def doc_type_label(type_counts: dict[str, float], taxonomy: IntentTaxonomy,
                   multi_label_threshold: float = DEFAULT_MULTI_LABEL_THRESHOLD) -> np.ndarray:
    """TripClick-style labeling: clicked document types are the intents."""
    if not type_counts:
        raise ValueError("type_counts must be non-empty")
    mass = np.zeros(taxonomy.size)
    for doc_type, count in type_counts.items():
        mass[taxonomy.index(doc_type)] += count
    y = (mass / mass.sum() >= multi_label_threshold).astype(int)
    if multi_label_threshold >= 1.0 or not y.any():
        y = np.zeros(taxonomy.size, dtype=int)
        y[int(np.argmax(mass))] = 1
    return y


def export_labels(labels: dict[str, np.ndarray], perplexities: dict[str, float],
                  taxonomy: IntentTaxonomy, path) -> None:
    """TSV export: query, semicolon-joined intents, perplexity."""
    lines = ["query\tintents\tperplexity"]
    for query in sorted(labels):
        names = ";".join(taxonomy.names(labels[query]))
        lines.append(f"{query}\t{names}\t{perplexities.get(query, float('nan')):.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_labels(path, taxonomy: IntentTaxonomy) -> dict[str, np.ndarray]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for line in lines[1:]:
        if not line:
            continue
        query, names, _ = line.split("\t")
        labels[query] = taxonomy.vector([n for n in names.split(";") if n])
    return labels
