"""Click-log parsing, sessionization, curation, and synthetic generation.

The canonical on-disk format is a UTF-8 TSV with a header row and columns
(timestamp, session_id, query, doc_id, doc_url, doc_type, doc_title,
click_count). A "tripclick-like" variant carries the same fields minus
click_count (raw logs, one click per row).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

CANONICAL_COLUMNS = ("timestamp", "session_id", "query", "doc_id", "doc_url",
                     "doc_type", "doc_title", "click_count")
TRIPCLICK_COLUMNS = ("session_id", "timestamp", "query", "doc_id", "doc_url",
                     "doc_type", "doc_title")

FORMATS = ("canonical-tsv", "tripclick-like")

DEFAULT_GAP_SECONDS = 1800

_WS_RE = re.compile(r"\s+")


def normalize_query(text: str) -> str:
    """Lowercase, trim, collapse internal whitespace."""
    return _WS_RE.sub(" ", text.strip().lower())


@dataclass(frozen=True)
class ClickEvent:
    timestamp: int
    session_id: str
    query: str
    doc_id: str
    doc_url: str
    doc_type: str
    doc_title: str
    click_count: int = 1


@dataclass(frozen=True)
class SessionStep:
    """One query+click interaction with its page context.

    The clicked-document annotation is the document type; page context is
    the URL path of the page the search was issued from (the previously
    clicked document's path, empty for the first step).
    """

    event: ClickEvent
    page_context: str

    @property
    def query(self) -> str:
        return self.event.query

    @property
    def annotation(self) -> str:
        return self.event.doc_type


@dataclass(frozen=True)
class Session:
    session_id: str
    steps: tuple[SessionStep, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class SessionExample:
    """A classification example at one step, with preceding context attached."""

    session: Session
    step_index: int  # 1-based

    @property
    def step(self) -> SessionStep:
        return self.session.steps[self.step_index - 1]

    @property
    def context(self) -> tuple[SessionStep, ...]:
        return self.session.steps[:self.step_index - 1]


@dataclass
class SessionSplit:
    train_examples: list[SessionExample]
    eval_examples: list[SessionExample]


@dataclass
class ParseResult:
    events: list[ClickEvent]
    malformed: int
    malformed_reasons: list[str] = field(default_factory=list)


class LogFormatError(ValueError):
    pass


def _parse_row(fields: list[str], columns: tuple[str, ...]) -> ClickEvent:
    if len(fields) != len(columns):
        raise ValueError(f"expected {len(columns)} fields, got {len(fields)}")
    row = dict(zip(columns, fields))
    query = normalize_query(row["query"])
    if not query:
        raise ValueError("empty query")
    timestamp = int(row["timestamp"])
    click_count = int(row.get("click_count", "1"))
    if click_count < 1:
        raise ValueError(f"click_count must be >= 1, got {click_count}")
    return ClickEvent(timestamp=timestamp, session_id=row["session_id"],
                      query=query, doc_id=row["doc_id"], doc_url=row["doc_url"],
                      doc_type=row["doc_type"], doc_title=row["doc_title"],
                      click_count=click_count)


def parse_log(path, format: str = "canonical-tsv",
              max_malformed_fraction: float = 0.10) -> ParseResult:
    """Parse a click log; malformed rows are counted, not silently dropped."""
    path = Path(path)
    if format == "canonical-tsv":
        columns = CANONICAL_COLUMNS
    elif format == "tripclick-like":
        columns = TRIPCLICK_COLUMNS
    else:
        raise LogFormatError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise FileNotFoundError(path)

    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LogFormatError(f"{path}: empty file, missing header")
    header = tuple(lines[0].split("\t"))
    if header != columns:
        raise LogFormatError(f"{path}: header {header} does not match {format} columns")

    events: list[ClickEvent] = []
    reasons: list[str] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            events.append(_parse_row(line.split("\t"), columns))
        except ValueError as exc:
            reasons.append(f"line {lineno}: {exc}")
    n_rows = len(lines) - 1
    if n_rows and len(reasons) / n_rows > max_malformed_fraction:
        raise LogFormatError(
            f"{path}: {len(reasons)}/{n_rows} malformed rows (> "
            f"{max_malformed_fraction:.0%}); first errors: {reasons[:3]}")
    return ParseResult(events=events, malformed=len(reasons), malformed_reasons=reasons)


def write_log(events: list[ClickEvent], path) -> None:
    """Serialize events in the canonical TSV format."""
    lines = ["\t".join(CANONICAL_COLUMNS)]
    for e in events:
        lines.append("\t".join([str(e.timestamp), e.session_id, e.query, e.doc_id,
                                e.doc_url, e.doc_type, e.doc_title, str(e.click_count)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def url_path(url: str) -> str:
    return urlsplit(url).path


def sessionize(events: list[ClickEvent], gap_seconds: int = DEFAULT_GAP_SECONDS) -> list[Session]:
    """Group events into sessions by id, splitting on time gaps.

    Events sharing a session_id with consecutive gaps <= gap_seconds form
    one session; a larger gap starts a new session with a derived id.
    Per-id event order follows timestamps (stable for ties).
    """
    if gap_seconds <= 0:
        raise ValueError("gap_seconds must be positive")
    by_id: dict[str, list[ClickEvent]] = {}
    for e in events:
        by_id.setdefault(e.session_id, []).append(e)
    sessions = []
    for sid, evs in by_id.items():
        evs = sorted(evs, key=lambda e: e.timestamp)
        chunks: list[list[ClickEvent]] = [[evs[0]]]
        for prev, cur in zip(evs, evs[1:]):
            if cur.timestamp - prev.timestamp > gap_seconds:
                chunks.append([cur])
            else:
                chunks[-1].append(cur)
        for part, chunk in enumerate(chunks):
            out_id = sid if len(chunks) == 1 else f"{sid}#{part}"
            steps = []
            for i, e in enumerate(chunk):
                page = url_path(chunk[i - 1].doc_url) if i > 0 else ""
                steps.append(SessionStep(event=e, page_context=page))
            sessions.append(Session(session_id=out_id, steps=tuple(steps)))
    return sessions


def curate_sessions(sessions: list[Session], min_len: int = 2,
                    max_len: int = 6) -> SessionSplit:
    """Keep sessions with min_len <= n <= max_len; emit per-step examples.

    Training examples cover steps 1..n-1; eval examples cover steps 2..n,
    so every eval example has at least one preceding context step.
    """
    train, evals = [], []
    for s in sessions:
        n = len(s)
        if not (min_len <= n <= max_len):
            continue
        train.extend(SessionExample(s, i) for i in range(1, n))
        evals.extend(SessionExample(s, i) for i in range(2, n + 1))
    return SessionSplit(train_examples=train, eval_examples=evals)


# ---------------------------------------------------------------------------
# Synthetic click-log generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_intents: int = 8
    n_queries: int = 400
    vocab_overlap: float = 0.3
    n_sessions: int = 500
    drift_prob: float = 0.0
    seed: int = 0
    session_len_min: int = 2
    session_len_max: int = 6
    tokens_per_query: int = 3
    tokens_per_intent: int = 30
    shared_tokens: int = 30
    docs_per_intent: int = 5
    clicks_scale: int = 8  # aggregated click counts drawn from 1..scale


@dataclass(frozen=True)
class SynthStepTruth:
    session_id: str
    step_index: int  # 1-based
    session_intent: str
    global_intent: str
    drifted: bool


@dataclass
class SynthTruth:
    intents: list[str]
    query_global_intent: dict[str, str]
    steps: list[SynthStepTruth]

    @property
    def drift_fraction(self) -> float:
        if not self.steps:
            return 0.0
        return sum(s.drifted for s in self.steps) / len(self.steps)


def synth_generate(spec: SynthSpec) -> tuple[list[ClickEvent], SynthTruth]:
    """Generate a planted-cluster click log; deterministic per seed.

    Each intent owns a token sub-vocabulary; query tokens are drawn from
    the intent pool or, with probability vocab_overlap, a shared pool.
    Sessions carry one session-level intent; with probability drift_prob a
    step reuses a query whose global intent differs while the click stays
    on the session intent, manufacturing global-vs-session disagreement.
    """
    if spec.n_intents < 1 or spec.n_queries < 1:
        raise ValueError("n_intents and n_queries must be positive")
    if not (0.0 <= spec.vocab_overlap <= 1.0 and 0.0 <= spec.drift_prob <= 1.0):
        raise ValueError("vocab_overlap and drift_prob must be in [0, 1]")
    rng = random.Random(spec.seed)
    intents = [f"intent{i}" for i in range(spec.n_intents)]
    pools = {name: [f"i{i}w{k}" for k in range(spec.tokens_per_intent)]
             for i, name in enumerate(intents)}
    shared = [f"shw{k}" for k in range(spec.shared_tokens)]

    queries_by_intent: dict[str, list[str]] = {name: [] for name in intents}
    query_global: dict[str, str] = {}
    seen = set()
    for j in range(spec.n_queries):
        intent = intents[j % spec.n_intents]
        for _ in range(1000):
            toks = []
            for _ in range(spec.tokens_per_query):
                if rng.random() < spec.vocab_overlap:
                    toks.append(rng.choice(shared))
                else:
                    toks.append(rng.choice(pools[intent]))
            q = " ".join(toks)
            if q not in seen:
                break
        else:
            raise RuntimeError("could not generate enough distinct queries")
        seen.add(q)
        query_global[q] = intent
        queries_by_intent[intent].append(q)

    docs = {name: [(f"d{i}_{k}", f"/{name}/page{k}", f"{name} article {k}")
                   for k in range(spec.docs_per_intent)]
            for i, name in enumerate(intents)}

    events: list[ClickEvent] = []
    steps: list[SynthStepTruth] = []
    t0 = 1_600_000_000
    for s in range(spec.n_sessions):
        sid = f"s{s:06d}"
        session_intent = rng.choice(intents)
        length = rng.randint(spec.session_len_min, spec.session_len_max)
        for step in range(1, length + 1):
            drifted = spec.n_intents > 1 and rng.random() < spec.drift_prob
            if drifted:
                other = rng.choice([i for i in intents if i != session_intent])
                query = rng.choice(queries_by_intent[other])
            else:
                query = rng.choice(queries_by_intent[session_intent])
            doc_id, url, title = rng.choice(docs[session_intent])
            events.append(ClickEvent(
                timestamp=t0 + s * 86400 + step * 60, session_id=sid,
                query=query, doc_id=doc_id, doc_url=url,
                doc_type=session_intent, doc_title=title,
                click_count=rng.randint(1, spec.clicks_scale)))
            steps.append(SynthStepTruth(sid, step, session_intent,
                                        query_global[query], drifted))
    return events, SynthTruth(intents=intents, query_global_intent=query_global,
                              steps=steps)
