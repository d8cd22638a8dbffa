"""Evaluation suite: top words, NPMI coherence, diversity, quality, and
held-out perplexity.

Coherence uses document-level binary co-occurrence statistics from a
reference corpus (the training split, never test, to avoid leakage) over
each topic's top 10 words; diversity is the unique fraction of the top 25
words across topics; quality is their product; perplexity is the
exponentiated per-token negative log-likelihood on the deterministic
evaluation path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .corpus import BowCorpus, dense_counts
from .model import ModelConfig, predict_batch, store_vocab_size, topic_word_dist

N_COHERENCE = 10
N_DIVERSITY = 25


class VocabularyMismatch(ValueError):
    """A word id or parameter shape does not fit the corpus vocabulary."""


def top_words(beta: np.ndarray, n: int) -> list[list[int]]:
    """Per-topic word ids by descending probability, ties by ascending id."""
    n_eff = min(n, beta.shape[1])
    out = []
    for row in beta:
        order = np.argsort(-row, kind="stable")
        out.append([int(i) for i in order[:n_eff]])
    return out


class CooccurrenceStats:
    """Document-frequency and pairwise joint-document counts.

    Occurrence is binary per document.  Joint counts are computed from
    sorted posting lists on demand, so building the stats is linear in the
    corpus and pair queries stay cheap for top-word lists.
    """

    def __init__(self, n_docs: int, postings: list[np.ndarray]):
        self.n_docs = n_docs
        self._postings = postings
        self.doc_freq = np.array([len(p) for p in postings], dtype=np.int64)

    @property
    def vocab_size(self) -> int:
        return len(self._postings)

    def joint(self, w1: int, w2: int) -> int:
        return int(
            np.intersect1d(self._postings[w1], self._postings[w2], assume_unique=True).size
        )


def build_cooccurrence(corpus: BowCorpus, vocab_size: int) -> CooccurrenceStats:
    where: list[list[int]] = [[] for _ in range(vocab_size)]
    for doc_id, doc in enumerate(corpus.docs):
        for w in doc.counts:
            where[w].append(doc_id)
    postings = [np.array(ids, dtype=np.int64) for ids in where]
    return CooccurrenceStats(n_docs=len(corpus.docs), postings=postings)


def npmi_pair(p_i: float, p_j: float, p_ij: float) -> float:
    """Normalized pointwise mutual information for one word pair.

    Degenerate cases keep the score total and bounded: a never-co-occurring
    pair scores -1, a pair present in every document scores 0.
    """
    if p_ij == 0.0:
        return -1.0
    if p_ij == 1.0:
        return 0.0
    return math.log(p_ij / (p_i * p_j)) / (-math.log(p_ij))


def npmi_coherence(topics: list[list[int]], stats: CooccurrenceStats) -> float:
    """Mean over topics of the mean pairwise NPMI of their top words."""
    n = stats.n_docs
    per_topic = []
    for words in topics:
        for w in words:
            if w >= stats.vocab_size:
                raise VocabularyMismatch(
                    f"word id {w} outside reference vocabulary of {stats.vocab_size}"
                )
        scores = []
        for w1, w2 in combinations(words, 2):
            p_ij = stats.joint(w1, w2) / n
            scores.append(npmi_pair(stats.doc_freq[w1] / n, stats.doc_freq[w2] / n, p_ij))
        per_topic.append(sum(scores) / len(scores))
    return float(sum(per_topic) / len(per_topic))


def topic_diversity(topics: list[list[int]]) -> float:
    """Fraction of distinct word ids across all topics' lists."""
    slots = sum(len(t) for t in topics)
    distinct = len({w for t in topics for w in t})
    return distinct / slots


def topic_quality(coherence: float, diversity: float) -> float:
    return coherence * diversity


def perplexity(
    store: ad.ParamStore,
    config: ModelConfig,
    corpus_split: BowCorpus,
    batch_size: int = 1024,
) -> float:
    """exp(-sum(X log X') / sum(X)) over the split, deterministic path."""
    if len(corpus_split) == 0:
        raise ValueError("perplexity: empty split")
    v = store_vocab_size(store)
    cfg = replace(config, eval_path="deterministic")
    log_lik = 0.0
    tokens = 0.0
    n = len(corpus_split)
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        x = dense_counts(corpus_split, idx, v)
        _, x_prime = predict_batch(x, store, cfg)
        log_lik += float((x * np.log(np.maximum(x_prime, 1e-12))).sum())
        tokens += float(x.sum())
    return float(np.exp(-log_lik / tokens))


@dataclass
class MetricsReport:
    coherence: float
    diversity: float
    quality: float
    perplexity: float
    config: dict
    corpus_id: str
    checkpoint_id: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "coherence": self.coherence,
                "diversity": self.diversity,
                "quality": self.quality,
                "perplexity": self.perplexity,
                "config": self.config,
                "corpus_id": self.corpus_id,
                "checkpoint_id": self.checkpoint_id,
            },
            indent=2,
        )


def evaluate_model(
    store: ad.ParamStore,
    config: ModelConfig,
    eval_split: BowCorpus,
    reference_split: BowCorpus,
    vocab_size: int,
    corpus_id: str = "",
    checkpoint_id: str = "",
) -> tuple[MetricsReport, np.ndarray]:
    """All four metrics against a split, coherence referenced to another.

    Returns the report and the beta matrix (for top-word export).
    """
    if store_vocab_size(store) != vocab_size:
        raise VocabularyMismatch(
            f"model vocabulary {store_vocab_size(store)} != corpus vocabulary {vocab_size}"
        )
    with ad.no_grad():
        beta = topic_word_dist(store["topic_emb"], store["word_emb"]).data
    stats = build_cooccurrence(reference_split, vocab_size)
    coh = npmi_coherence(top_words(beta, N_COHERENCE), stats)
    div = topic_diversity(top_words(beta, N_DIVERSITY))
    ppl = perplexity(store, config, eval_split)
    report = MetricsReport(
        coherence=coh,
        diversity=div,
        quality=topic_quality(coh, div),
        perplexity=ppl,
        config=config.__dict__.copy(),
        corpus_id=corpus_id,
        checkpoint_id=checkpoint_id,
    )
    return report, beta
