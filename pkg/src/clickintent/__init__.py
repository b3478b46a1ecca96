"""Click-log query representation learning and intent classification toolkit."""

from .clicklog import (ClickEvent, Session, SessionSplit, SynthSpec, curate_sessions,
                       parse_log, sessionize, synth_generate, write_log)
from .cosets import CoQueryCorpus, DocumentSet, batch_sample, compute_weights, extract_sets
from .encoder import EncoderParams, Tokenizer, adam_step, encode, finite_diff_grad
from .estimators import IntentClassifier, QueryEmbedder
from .labeling import (HS_TAXONOMY, IntentRule, IntentTaxonomy, concordance_rate,
                       intent_distribution, label_query, perplexity,
                       session_inferred_intent)
from .losses import (EmbeddedSet, LossConfig, bce_loss, bench_complexity, cosine,
                     inter_loss, intra_loss, multiset_loss, pairwise_loss)
from .metrics import (MetricReport, ari, hit_rate_3, kmeans, ndcg_3, nmi,
                      precision_f1, stratified_split)

__version__ = "0.1.0"
