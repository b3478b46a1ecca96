"""Command-line interface over the pipeline stages."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import clicklog, cosets, encoder, labeling, metrics, pipeline
from .estimators import IntentClassifier, QueryEmbedder
from .losses import bench_complexity, bench_csv, bench_table


@click.group()
def main():
    """Click-log query representation learning and intent classification."""


def _load_taxonomy(path) -> labeling.IntentTaxonomy:
    return labeling.IntentTaxonomy(tuple(json.loads(Path(path).read_text())))


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--format", "log_format", default="canonical-tsv",
              type=click.Choice(list(clicklog.FORMATS)))
@click.option("--gap-seconds", default=clicklog.DEFAULT_GAP_SECONDS, show_default=True)
@click.option("--out", required=True, type=click.Path())
def ingest(input_path, log_format, gap_seconds, out):
    """Parse a click log and write it in the canonical TSV format."""
    parsed = clicklog.parse_log(input_path, log_format)
    clicklog.write_log(parsed.events, out)
    sessions = clicklog.sessionize(parsed.events, gap_seconds)
    click.echo(f"{len(parsed.events)} events ({parsed.malformed} malformed rows), "
               f"{len(sessions)} sessions -> {out}")
    for reason in parsed.malformed_reasons[:10]:
        click.echo(f"  malformed: {reason}", err=True)


@main.command("synth-gen")
@click.option("--intents", default=8, show_default=True)
@click.option("--queries", default=400, show_default=True)
@click.option("--sessions", default=500, show_default=True)
@click.option("--drift", default=0.0, show_default=True)
@click.option("--overlap", default=0.3, show_default=True)
@click.option("--len-min", default=2, show_default=True)
@click.option("--len-max", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--truth-out", type=click.Path(), default=None)
def synth_gen(intents, queries, sessions, drift, overlap, len_min, len_max,
              seed, out, truth_out):
    """Generate a synthetic planted-cluster click log."""
    spec = clicklog.SynthSpec(n_intents=intents, n_queries=queries,
                              vocab_overlap=overlap, n_sessions=sessions,
                              drift_prob=drift, seed=seed,
                              session_len_min=len_min, session_len_max=len_max)
    events, truth = clicklog.synth_generate(spec)
    clicklog.write_log(events, out)
    if truth_out:
        Path(truth_out).write_text(json.dumps(
            {"intents": truth.intents,
             "query_global_intent": truth.query_global_intent,
             "drift_fraction": truth.drift_fraction}, indent=2, sort_keys=True))
    click.echo(f"{len(events)} events, drift fraction {truth.drift_fraction:.3f} -> {out}")


@main.command("extract-sets")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--min-clicks", default=1, show_default=True)
@click.option("--key", default="doc_type", type=click.Choice(["doc_type", "url_pattern"]))
@click.option("--out", required=True, type=click.Path())
def extract_sets_cmd(input_path, min_clicks, key, out):
    """Group queries into co-query document sets."""
    events = clicklog.parse_log(input_path).events
    corpus = cosets.extract_sets(events, min_clicks, key)
    cosets.save_corpus(corpus, out)
    click.echo(f"{corpus.n_sets} sets ({len(corpus.eligible_sets())} with >= 2 "
               f"members) -> {out}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--threshold", default=labeling.DEFAULT_MULTI_LABEL_THRESHOLD,
              show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--taxonomy-out", type=click.Path(), default=None)
def label(input_path, rules_path, threshold, out, taxonomy_out):
    """Weak-supervision intent labels from URL patterns and click mass."""
    events = clicklog.parse_log(input_path).events
    if rules_path:
        rules = labeling.load_rules(rules_path)
        names = sorted({r.intent for r in rules} - {labeling.FALLBACK_INTENT})
        taxonomy = labeling.IntentTaxonomy(tuple(names) + (labeling.FALLBACK_INTENT,))
    else:
        rules, taxonomy = pipeline.derive_rules(events)
    labels, perplexities = pipeline.label_corpus(events, rules, taxonomy, threshold)
    labeling.export_labels(labels, perplexities, taxonomy, out)
    if taxonomy_out:
        Path(taxonomy_out).write_text(json.dumps(list(taxonomy.intents)))
    click.echo(f"{len(labels)} labeled queries over {taxonomy.size} intents -> {out}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--objective", default="multiset",
              type=click.Choice(["multiset", "pairwise"]))
@click.option("--vocab-size", default=32768, show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--hidden", default=128, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--steps", default=200, show_default=True)
@click.option("--sets-per-batch", default=8, show_default=True)
@click.option("--queries-per-set", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--checkpoint", required=True, type=click.Path())
def train(corpus_path, objective, vocab_size, dim, hidden, lr, steps,
          sets_per_batch, queries_per_set, seed, checkpoint):
    """Fit the query encoder with the chosen contrastive objective."""
    corpus = cosets.load_corpus(corpus_path)
    embedder = QueryEmbedder(vocab_size=vocab_size, dim=dim, hidden=hidden,
                             objective=objective, sets_per_batch=sets_per_batch,
                             queries_per_set=queries_per_set, lr=lr, steps=steps,
                             seed=seed)
    embedder.fit(corpus)
    encoder.save_checkpoint(embedder.params_, checkpoint)
    first = embedder.loss_curve_[0] if embedder.loss_curve_ else float("nan")
    last = embedder.loss_curve_[-1] if embedder.loss_curve_ else float("nan")
    click.echo(f"trained {steps} steps, loss {first:.4f} -> {last:.4f}; "
               f"checkpoint {checkpoint}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--queries-file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def embed(checkpoint, queries_file, out):
    """Embed one query per input line; TSV (query, comma-joined floats)."""
    params = encoder.load_checkpoint(checkpoint)
    queries = [q for q in Path(queries_file).read_text().splitlines() if q.strip()]
    embs, _ = encoder.encode_batch(params, queries)
    lines = [f"{q}\t" + ",".join(f"{x:.6g}" for x in row)
             for q, row in zip(queries, embs)]
    Path(out).write_text("\n".join(lines) + "\n")
    click.echo(f"{len(queries)} embeddings ({params.dim}-d) -> {out}")


@main.command("cluster-eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=0, help="0 = number of distinct label argmaxes")
@click.option("--restarts", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cluster_eval(checkpoint, labels_path, taxonomy_path, k, restarts, seed):
    """K-means the embeddings of labeled queries and report ARI/NMI."""
    params = encoder.load_checkpoint(checkpoint)
    taxonomy = _load_taxonomy(taxonomy_path)
    labels = labeling.load_labels(labels_path, taxonomy)
    queries = sorted(labels)
    truth = np.array([int(np.argmax(labels[q])) for q in queries])
    embs, _ = encoder.encode_batch(params, queries)
    k = k or len(set(truth.tolist()))
    part = metrics.kmeans(embs, k, restarts, seed)
    click.echo(json.dumps({"ari": metrics.ari(part, truth),
                           "nmi": metrics.nmi(part, truth), "k": k,
                           "n_queries": len(queries)}, indent=2, sort_keys=True))


@main.command("train-classifier")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--splits", default="0.6:0.2:0.2", show_default=True)
@click.option("--freeze-encoder/--co-train", default=True)
@click.option("--epochs", default=150, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="classifier .npz (head weights + thresholds)")
@click.option("--predictions-out", type=click.Path(), default=None)
def train_classifier_cmd(checkpoint, labels_path, taxonomy_path, splits,
                         freeze_encoder, epochs, seed, out, predictions_out):
    """Fit the multi-label intent head on globally labeled queries."""
    params = encoder.load_checkpoint(checkpoint)
    taxonomy = _load_taxonomy(taxonomy_path)
    labels = labeling.load_labels(labels_path, taxonomy)
    ratios = tuple(float(x) for x in splits.split(":"))
    queries = sorted(labels)
    train_q, val_q, test_q = metrics.stratified_split(
        queries, [labels[q] for q in queries], ratios, seed=seed)
    clf = IntentClassifier(encoder_params=params, epochs=epochs,
                           freeze_encoder=freeze_encoder, seed=seed)
    clf.fit(train_q, [labels[q] for q in train_q],
            val_q, [labels[q] for q in val_q])
    scores = clf.predict_proba(test_q)
    y_test = np.array([labels[q] for q in test_q])
    report = metrics.classification_report(scores, clf.thresholds_, y_test)
    np.savez_compressed(out, w=clf.trained_.head.w, b=clf.trained_.head.b,
                        thresholds=clf.thresholds_)
    if predictions_out:
        pipeline.export_predictions(test_q, scores, clf.thresholds_, taxonomy,
                                    predictions_out)
    click.echo(report.format_table())


@main.command("eval")
@click.option("--predictions", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
def eval_cmd(predictions, truth_path, taxonomy_path):
    """Score a predictions TSV against a truth labels TSV."""
    taxonomy = _load_taxonomy(taxonomy_path)
    truth_labels = labeling.load_labels(truth_path, taxonomy)
    ids, scores, decided = [], [], []
    for line in Path(predictions).read_text().splitlines()[1:]:
        if not line:
            continue
        name, probs, chosen = line.split("\t")
        ids.append(name)
        scores.append([float(x) for x in probs.split(",")])
        decided.append(taxonomy.vector([c for c in chosen.split(";") if c]))
    missing = [i for i in ids if i not in truth_labels]
    if missing:
        raise click.ClickException(f"{len(missing)} ids missing from truth, "
                                   f"e.g. {missing[:3]}")
    y = np.array([truth_labels[i] for i in ids])
    scores = np.array(scores)
    precision, f1 = metrics.precision_f1(np.array(decided), y)
    hr = metrics.hit_rate_3(scores, y)
    nd, _ = metrics.ndcg_3(scores, y)
    click.echo(json.dumps({"precision": precision, "f1": f1, "hit_rate_3": hr,
                           "ndcg_3": nd, "n": len(ids)}, indent=2, sort_keys=True))


@main.command("session-eval")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--context", default="all",
              type=click.Choice(["none", "prev-query", "page", "all"]))
@click.option("--seed", default=42, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def session_eval_cmd(input_path, checkpoint, rules_path, context, seed, out):
    """Session-based intent classification with one context configuration."""
    events = clicklog.parse_log(input_path).events
    params = encoder.load_checkpoint(checkpoint)
    if rules_path:
        rules = labeling.load_rules(rules_path)
        names = sorted({r.intent for r in rules} - {labeling.FALLBACK_INTENT})
        taxonomy = labeling.IntentTaxonomy(tuple(names) + (labeling.FALLBACK_INTENT,))
    else:
        rules, taxonomy = pipeline.derive_rules(events)
    labels, _ = pipeline.label_corpus(events, rules, taxonomy,
                                      labeling.DEFAULT_MULTI_LABEL_THRESHOLD)
    config = pipeline.load_config(overrides={"seed": seed,
                                             "session_contexts": context})
    sessions = clicklog.sessionize(events)
    payload = pipeline.session_eval(sessions, params, rules, taxonomy, labels,
                                    config)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command("bench-loss")
@click.option("--k-range", default="4", show_default=True,
              help="comma-separated set counts")
@click.option("--n-range", default="100,200,400", show_default=True,
              help="comma-separated per-set sizes")
@click.option("--trials", default=5, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV output path")
def bench_loss(k_range, n_range, trials, out):
    """Time multiset vs pairwise loss across (K, N) grid."""
    ks = [int(x) for x in k_range.split(",")]
    ns = [int(x) for x in n_range.split(",")]
    rows = bench_complexity(ks, ns, trials)
    click.echo(bench_table(rows))
    if out:
        Path(out).write_text(bench_csv(rows))


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--csv-out", type=click.Path(), default=None)
def report(run_dirs, csv_out):
    """Side-by-side comparison table over completed runs."""
    rows, missing = pipeline.collect_artifacts(run_dirs)
    click.echo(pipeline.report_text(rows))
    for path in missing:
        click.echo(f"warning: missing artifact {path}", err=True)
    if csv_out:
        Path(csv_out).write_text(pipeline.report_csv(rows))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "overrides", multiple=True,
              help="key=value config override (repeatable)")
def run(config_path, overrides):
    """Run the full pipeline from a key=value config file."""
    kv = {}
    for item in overrides:
        key, _, value = item.partition("=")
        kv[key] = value
    try:
        config = pipeline.load_config(config_path, kv)
        result = pipeline.run_pipeline(config, echo=click.echo)
    except (pipeline.ConfigError, pipeline.PipelineError) as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(result, indent=2, sort_keys=True))


@main.command("verify-manifest")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def verify_manifest(run_dir):
    """Check the artifact hash chain of a completed run."""
    manifest = pipeline.Manifest(Path(run_dir))
    problems = manifest.verify(run_dir)
    if problems:
        for p in problems:
            click.echo(p, err=True)
        sys.exit(1)
    click.echo("manifest chain intact")


if __name__ == "__main__":
    main()
