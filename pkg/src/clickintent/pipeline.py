"""End-to-end orchestration: config file, staged runs, manifests, reports.

A run executes ingest (or synth) -> extract-sets -> label -> train ->
cluster-eval -> train-classifier -> eval -> session-eval, writing every
artifact under out_dir. Each stage appends a manifest entry carrying the
sha256 of its inputs and outputs plus the previous entry's hash, so any
tampering upstream breaks the chain downstream.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classify, clicklog, cosets, encoder, labeling, metrics
from .estimators import IntentClassifier, QueryEmbedder

ENV_PREFIX = "CLICKINTENT_"

DEFAULTS: dict[str, object] = {
    "out_dir": "runs/default",
    "log_path": "",            # empty -> generate a synthetic log
    "log_format": "canonical-tsv",
    "gap_seconds": 1800,
    "seed": 42,
    # synthetic corpus
    "synth_intents": 8,
    "synth_queries": 400,
    "synth_overlap": 0.3,
    "synth_sessions": 500,
    "synth_drift": 0.0,
    "synth_len_min": 2,
    "synth_len_max": 6,
    # co-query sets
    "min_clicks": 1,
    "group_key": "doc_type",
    # labeling
    "rules_path": "",          # empty -> derive /segment/ rules from the log
    "multi_label_threshold": 0.2,
    # encoder + objective
    "objective": "multiset",
    "vocab_size": 32768,
    "dim": 64,
    "hidden": 128,
    "lr": 1e-3,
    "steps": 200,
    "sets_per_batch": 8,
    "queries_per_set": 8,
    "epsilon": 1e-6,
    "cosine_clamp": 1.0 - 1e-6,
    # splits
    "split_train": 0.6,
    "split_val": 0.2,
    "split_test": 0.2,
    "min_group": 3,
    # classifier
    "clf_lr": 0.2,
    "clf_epochs": 150,
    "clf_patience": 5,
    "freeze_encoder": True,
    "max_tokens": 64,
    # session evaluation
    "session_contexts": "none,prev-query,page,all",
    "curate_min_len": 2,
    "curate_max_len": 6,
    # clustering eval
    "kmeans_restarts": 10,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    @property
    def ratios(self):
        return (self.values["split_train"], self.values["split_val"],
                self.values["split_test"])


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path=None, overrides: dict[str, str] | None = None,
                env: dict[str, str] | None = None) -> RunConfig:
    """key=value config file; unknown keys rejected; env vars win.

    Environment variables named CLICKINTENT_<KEY> (upper case) override
    both defaults and file values.
    """
    values = dict(DEFAULTS)
    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw.strip())
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(raw))
    env = os.environ if env is None else env
    for key in DEFAULTS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _coerce(key, env[env_key])
    return RunConfig(values)


def stage_seed(root_seed: int, stage: str) -> int:
    """Per-stage seed derived from the root seed by stage name."""
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# ---------------------------------------------------------------------------
# Manifest chain
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / "manifest.json"
        self.entries: list[dict] = []
        if self.path.exists():
            self.entries = json.loads(self.path.read_text())

    def record(self, stage: str, inputs: list[Path], outputs: list[Path],
               params: dict) -> None:
        entry = {
            "stage": stage,
            "prev_hash": self._entry_hash(self.entries[-1]) if self.entries else "",
            "inputs": {Path(p).name: sha256_file(p) for p in inputs},
            "outputs": {Path(p).name: sha256_file(p) for p in outputs},
            "params": params,
        }
        self.entries.append(entry)
        self.path.write_text(json.dumps(self.entries, indent=2, sort_keys=True))

    @staticmethod
    def _entry_hash(entry: dict) -> str:
        return hashlib.sha256(
            json.dumps(entry, sort_keys=True).encode()).hexdigest()

    def verify(self, out_dir) -> list[str]:
        """Returns a list of problems (empty means the chain is intact)."""
        problems = []
        prev = ""
        for entry in self.entries:
            if entry["prev_hash"] != prev:
                problems.append(f"{entry['stage']}: broken chain link")
            for name, digest in {**entry["inputs"], **entry["outputs"]}.items():
                p = Path(out_dir) / name
                if not p.exists():
                    problems.append(f"{entry['stage']}: missing artifact {name}")
                elif sha256_file(p) != digest:
                    problems.append(f"{entry['stage']}: hash mismatch for {name}")
            prev = self._entry_hash(entry)
        return problems


# ---------------------------------------------------------------------------
# Stage helpers
# ---------------------------------------------------------------------------

def derive_rules(events) -> tuple[list[labeling.IntentRule], labeling.IntentTaxonomy]:
    """URL-pattern rules keyed on the first path segment of clicked URLs.

    Each distinct leading segment becomes an intent with pattern "^/seg/";
    the taxonomy is the sorted segment list plus the fallback intent.
    """
    segments = set()
    for e in events:
        parts = [p for p in clicklog.url_path(e.doc_url).split("/") if p]
        if parts:
            segments.add(parts[0])
    names = sorted(segments)
    rules = [labeling.IntentRule(name, rf"^/{name}(/|$)") for name in names]
    taxonomy = labeling.IntentTaxonomy(tuple(names) + (labeling.FALLBACK_INTENT,))
    return rules, taxonomy


def aggregate_click_stats(events) -> dict[str, dict[str, int]]:
    """query -> {doc_url: aggregated click count}."""
    stats: dict[str, dict[str, int]] = {}
    for e in events:
        stats.setdefault(e.query, {})
        stats[e.query][e.doc_url] = stats[e.query].get(e.doc_url, 0) + e.click_count
    return stats


def label_corpus(events, rules, taxonomy, threshold):
    stats = aggregate_click_stats(events)
    labels, perplexities = {}, {}
    for query, click_stats in stats.items():
        labels[query] = labeling.label_query(click_stats, rules, taxonomy, threshold)
        dist = labeling.intent_distribution(click_stats, rules, taxonomy)
        perplexities[query] = labeling.perplexity(dist)
    return labels, perplexities


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_pipeline(config: RunConfig, echo=lambda msg: None) -> dict:
    """Execute all stages; returns a dict of artifact paths and key metrics."""
    out = Path(str(config.out_dir))
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    manifest.entries = []  # fresh run resets the chain
    result = {"out_dir": str(out)}

    def run_stage(name, fn):
        echo(f"[{name}]")
        try:
            return fn()
        except Exception as exc:  # halt with stage name and cause
            raise PipelineError(name, exc) from exc

    # -- ingest / synth ----------------------------------------------------
    events_path = out / "events.tsv"

    def stage_ingest():
        if str(config.log_path):
            parsed = clicklog.parse_log(config.log_path, str(config.log_format))
            clicklog.write_log(parsed.events, events_path)
            manifest.record("ingest", [Path(str(config.log_path))], [events_path],
                            {"format": str(config.log_format),
                             "malformed": parsed.malformed})
            return parsed.events, None
        spec = clicklog.SynthSpec(
            n_intents=int(config.synth_intents), n_queries=int(config.synth_queries),
            vocab_overlap=float(config.synth_overlap),
            n_sessions=int(config.synth_sessions),
            drift_prob=float(config.synth_drift),
            seed=stage_seed(int(config.seed), "synth"),
            session_len_min=int(config.synth_len_min),
            session_len_max=int(config.synth_len_max))
        events, truth = clicklog.synth_generate(spec)
        clicklog.write_log(events, events_path)
        truth_path = out / "truth.json"
        truth_path.write_text(json.dumps({
            "intents": truth.intents,
            "query_global_intent": truth.query_global_intent,
            "drift_fraction": truth.drift_fraction}, indent=2, sort_keys=True))
        manifest.record("synth-gen", [], [events_path, truth_path],
                        {"spec": spec.__dict__})
        return events, truth

    events, truth = run_stage("ingest", stage_ingest)

    # -- extract-sets ------------------------------------------------------
    corpus_path = out / "cosets.jsonl"

    def stage_extract():
        corpus = cosets.extract_sets(events, int(config.min_clicks),
                                     str(config.group_key))
        cosets.save_corpus(corpus, corpus_path)
        manifest.record("extract-sets", [events_path], [corpus_path],
                        {"min_clicks": int(config.min_clicks),
                         "key": str(config.group_key)})
        return corpus

    corpus = run_stage("extract-sets", stage_extract)

    # -- label -------------------------------------------------------------
    labels_path = out / "labels.tsv"
    rules_path = out / "rules.json"
    taxonomy_path = out / "taxonomy.json"

    def stage_label():
        if str(config.rules_path):
            rules = labeling.load_rules(config.rules_path)
            names = sorted({r.intent for r in rules})
            if labeling.FALLBACK_INTENT in names:
                names.remove(labeling.FALLBACK_INTENT)
            taxonomy = labeling.IntentTaxonomy(tuple(names) + (labeling.FALLBACK_INTENT,))
        else:
            rules, taxonomy = derive_rules(events)
        labeling.save_rules(rules, rules_path)
        taxonomy_path.write_text(json.dumps(list(taxonomy.intents)))
        labels, perplexities = label_corpus(
            events, rules, taxonomy, float(config.multi_label_threshold))
        labeling.export_labels(labels, perplexities, taxonomy, labels_path)
        manifest.record("label", [events_path],
                        [labels_path, rules_path, taxonomy_path],
                        {"threshold": float(config.multi_label_threshold)})
        return rules, taxonomy, labels, perplexities

    rules, taxonomy, labels, perplexities = run_stage("label", stage_label)

    # -- train (representation) -------------------------------------------
    checkpoint_path = out / "checkpoint.npz"
    curve_path = out / "loss_curve.csv"

    def stage_train():
        embedder = QueryEmbedder(
            vocab_size=int(config.vocab_size), dim=int(config.dim),
            hidden=int(config.hidden), objective=str(config.objective),
            sets_per_batch=int(config.sets_per_batch),
            queries_per_set=int(config.queries_per_set), lr=float(config.lr),
            steps=int(config.steps), epsilon=float(config.epsilon),
            cosine_clamp=float(config.cosine_clamp),
            seed=stage_seed(int(config.seed), "train"))
        embedder.fit(corpus)
        encoder.save_checkpoint(embedder.params_, checkpoint_path)
        curve_path.write_text("step,loss\n" + "".join(
            f"{i},{v:.9g}\n" for i, v in enumerate(embedder.loss_curve_)))
        manifest.record("train", [corpus_path], [checkpoint_path, curve_path],
                        {"objective": str(config.objective),
                         "steps": int(config.steps)})
        return embedder

    embedder = run_stage("train", stage_train)

    # -- cluster-eval ------------------------------------------------------
    clustering_path = out / "clustering.json"

    def stage_cluster():
        queries = sorted(labels)
        truth_ids = [int(np.argmax(labels[q])) for q in queries]
        embs = embedder.transform(queries)
        k = len(set(truth_ids))
        part = metrics.kmeans(embs, k, int(config.kmeans_restarts),
                              stage_seed(int(config.seed), "cluster"))
        report = {"ari": metrics.ari(part, np.array(truth_ids)),
                  "nmi": metrics.nmi(part, np.array(truth_ids)),
                  "k": k, "n_queries": len(queries),
                  "protocol": "k-means stand-in (algorithm unspecified upstream)"}
        clustering_path.write_text(json.dumps(report, indent=2, sort_keys=True))
        manifest.record("cluster-eval", [checkpoint_path, labels_path],
                        [clustering_path], {"k": k})
        return report

    result["clustering"] = run_stage("cluster-eval", stage_cluster)

    # -- train-classifier + eval (global intents) --------------------------
    classifier_path = out / "classifier.npz"
    classification_path = out / "classification.json"
    predictions_path = out / "predictions.tsv"

    def stage_classifier():
        queries = sorted(labels)
        y = [labels[q] for q in queries]
        train_q, val_q, test_q = metrics.stratified_split(
            queries, y, config.ratios, int(config.min_group),
            stage_seed(int(config.seed), "split"))
        clf = IntentClassifier(
            encoder_params=embedder.params_, lr=float(config.clf_lr),
            epochs=int(config.clf_epochs), patience=int(config.clf_patience),
            freeze_encoder=bool(config.freeze_encoder),
            seed=stage_seed(int(config.seed), "classifier"))
        clf.fit(train_q, [labels[q] for q in train_q],
                val_q, [labels[q] for q in val_q])
        scores = clf.predict_proba(test_q)
        y_test = np.array([labels[q] for q in test_q])
        report = metrics.classification_report(scores, clf.thresholds_, y_test)
        np.savez_compressed(classifier_path, w=clf.trained_.head.w,
                            b=clf.trained_.head.b, thresholds=clf.thresholds_)
        payload = report.to_dict()
        payload["splits"] = {"train": len(train_q), "val": len(val_q),
                             "test": len(test_q)}
        classification_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        export_predictions(test_q, scores, clf.thresholds_, taxonomy,
                           predictions_path)
        manifest.record("train-classifier", [checkpoint_path, labels_path],
                        [classifier_path, classification_path, predictions_path],
                        {"freeze_encoder": bool(config.freeze_encoder)})
        return payload

    result["classification"] = run_stage("train-classifier", stage_classifier)

    # -- session-eval ------------------------------------------------------
    session_path = out / "session.json"

    def stage_session():
        sessions = clicklog.sessionize(events, int(config.gap_seconds))
        payload = session_eval(
            sessions, embedder.params_, rules, taxonomy, labels, config)
        session_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        manifest.record("session-eval", [events_path, checkpoint_path],
                        [session_path],
                        {"contexts": str(config.session_contexts)})
        return payload

    result["session"] = run_stage("session-eval", stage_session)

    result["manifest"] = str(manifest.path)
    return result


def export_predictions(ids, scores, thresholds, taxonomy, path) -> None:
    """TSV: input id, per-intent probabilities, decided label set."""
    lines = ["id\tprobabilities\tlabels"]
    decided = (np.asarray(scores) >= np.asarray(thresholds)[None, :]).astype(int)
    for i, name in enumerate(ids):
        probs = ",".join(f"{p:.6f}" for p in scores[i])
        chosen = ";".join(taxonomy.names(decided[i]))
        lines.append(f"{name}\t{probs}\t{chosen}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def session_eval(sessions, params, rules, taxonomy, global_labels, config) -> dict:
    """Context-ablation comparison on curated sessions.

    Sessions are split 60/20/20 (seeded); the classifier target at each
    step is the session-inferred intent of that step's click. Also reports
    the mean concordance rate against the global labels.
    """
    rng = random.Random(stage_seed(int(config.seed), "session-split"))
    sessions = sorted(sessions, key=lambda s: s.session_id)
    rng.shuffle(sessions)
    n = len(sessions)
    parts = (sessions[:int(0.6 * n)], sessions[int(0.6 * n):int(0.8 * n)],
             sessions[int(0.8 * n):])

    def dataset(split, train, context):
        curated = clicklog.curate_sessions(split, int(config.curate_min_len),
                                           int(config.curate_max_len))
        exs = curated.train_examples if train else curated.eval_examples
        X = [classify.assemble_session_input(e.session, e.step_index,
                                             int(config.max_tokens), context)
             for e in exs]
        Y = np.array([labeling.session_inferred_intent(e.step, rules, taxonomy)
                      for e in exs])
        return X, Y

    cr_values = []
    for s in sessions:
        if all(step.query in global_labels for step in s.steps) and len(s):
            cr_values.append(labeling.concordance_rate(s, global_labels, rules,
                                                       taxonomy))
    payload = {"concordance_rate": float(np.mean(cr_values)) if cr_values else None,
               "contexts": {}}
    for name in str(config.session_contexts).split(","):
        name = name.strip()
        context = classify.ContextConfig.preset(name)
        X_train, y_train = dataset(parts[0], True, context)
        X_val, y_val = dataset(parts[1], False, context)
        X_test, y_test = dataset(parts[2], False, context)
        if not X_train or not X_test:
            payload["contexts"][name] = None
            continue
        clf = IntentClassifier(
            encoder_params=params, lr=float(config.clf_lr),
            epochs=int(config.clf_epochs), patience=int(config.clf_patience),
            freeze_encoder=bool(config.freeze_encoder),
            seed=stage_seed(int(config.seed), f"session-{name}"))
        clf.fit(X_train, y_train, X_val, y_val)
        scores = clf.predict_proba(X_test)
        report = metrics.classification_report(scores, clf.thresholds_, y_test)
        payload["contexts"][name] = report.to_dict()
    return payload


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

REPORT_METRICS = ("precision", "f1", "hit_rate_3", "ndcg_3")


def collect_artifacts(run_dirs) -> tuple[list[dict], list[str]]:
    rows, missing = [], []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        row = {"run": run_dir.name}
        clustering = run_dir / "clustering.json"
        classification = run_dir / "classification.json"
        session = run_dir / "session.json"
        if clustering.exists():
            row.update({k: v for k, v in json.loads(clustering.read_text()).items()
                        if k in ("ari", "nmi")})
        else:
            missing.append(str(clustering))
        if classification.exists():
            data = json.loads(classification.read_text())
            row.update({k: data[k] for k in REPORT_METRICS if k in data})
        else:
            missing.append(str(classification))
        if session.exists():
            data = json.loads(session.read_text())
            for ctx, rep in (data.get("contexts") or {}).items():
                if rep:
                    row[f"session_f1[{ctx}]"] = rep["f1"]
        else:
            missing.append(str(session))
        rows.append(row)
    return rows, missing


def report_text(rows: list[dict]) -> str:
    cols = ["run"]
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for row in rows:
        lines.append("  ".join(_fmt(row.get(c)).ljust(widths[c]) for c in cols))
    return "\n".join(lines)


def report_csv(rows: list[dict]) -> str:
    cols = ["run"]
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    out = [",".join(cols)]
    for row in rows:
        out.append(",".join(_fmt(row.get(c)) for c in cols))
    return "\n".join(out) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
