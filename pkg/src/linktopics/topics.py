"""Topic modeling over pooled multilingual bags of links.

Collapsed Gibbs sampling LDA with a vocabulary of concept ids.  Training and
inference never read a document's language, which is what makes zero-shot
transfer to unseen languages possible: a bag from any language is just a
multiset of concept ids.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .densify import BagOfLinks, _read_str, _write_str

DEFAULT_MIN_DF = 500
DEFAULT_MIN_DOC_LINKS = 10
DEFAULT_BETA = 0.01
DEFAULT_TRAIN_ITERATIONS = 200
DEFAULT_INFER_ITERATIONS = 100
DEFAULT_BURN_IN = 50

TOPIC_MAGIC = b"WPDT"
TOPIC_VERSION = 1


class TopicModelError(Exception):
    pass


@dataclass
class Vocabulary:
    concepts: list[str]
    index: dict[str, int] = field(default_factory=dict)
    doc_frequency: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.index:
            self.index = {qid: i for i, qid in enumerate(self.concepts)}

    def __len__(self) -> int:
        return len(self.concepts)


@dataclass
class TopicModel:
    n_topics: int
    alpha: float
    beta: float
    topic_concept_counts: np.ndarray  # (K, |V|) int64
    topic_totals: np.ndarray  # (K,) int64
    vocabulary: Vocabulary
    seed: int

    def validate(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise TopicModelError("alpha and beta must be positive")
        if np.any(self.topic_concept_counts < 0):
            raise TopicModelError("negative topic-concept count")
        if not np.array_equal(self.topic_concept_counts.sum(axis=1),
                              self.topic_totals):
            raise TopicModelError("topic totals inconsistent with counts")

    def phi(self) -> np.ndarray:
        """Per-topic term distributions, rows summing to one."""
        counts = self.topic_concept_counts.astype(np.float64)
        smoothed = counts + self.beta
        return smoothed / smoothed.sum(axis=1, keepdims=True)


def default_alpha(n_topics: int) -> float:
    return 50.0 / n_topics


def prune(bags: Sequence[BagOfLinks],
          min_df: int = DEFAULT_MIN_DF,
          min_doc_links: int = DEFAULT_MIN_DOC_LINKS
          ) -> tuple[Vocabulary, list[BagOfLinks]]:
    """Drop rare concepts, then drop short documents.

    Document frequency counts distinct documents pooled across languages;
    document size counts multiplicity after concept pruning.
    """
    if min_df < 1 or min_doc_links < 1:
        raise TopicModelError("min_df and min_doc_links must be >= 1")
    df: dict[str, int] = {}
    for bag in bags:
        for qid in bag.counts:
            df[qid] = df.get(qid, 0) + 1
    kept = sorted(qid for qid, count in df.items() if count >= min_df)
    kept_set = set(kept)
    vocabulary = Vocabulary(concepts=kept,
                            doc_frequency={qid: df[qid] for qid in kept})
    out = []
    for bag in bags:
        filtered = BagOfLinks(concept=bag.concept, lang=bag.lang)
        for qid, count in bag.counts.items():
            if qid in kept_set:
                filtered.counts[qid] = count
                filtered.provenance[qid] = bag.provenance.get(qid, "existing")
        if filtered.size >= min_doc_links:
            out.append(filtered)
    if not out:
        raise TopicModelError("no documents survive pruning")
    return vocabulary, out


def _bag_to_tokens(bag: BagOfLinks, vocabulary: Vocabulary) -> np.ndarray:
    """Expand a bag into word-ordinal tokens, sorted for multiset semantics."""
    tokens = []
    for qid, count in bag.counts.items():
        w = vocabulary.index.get(qid)
        if w is not None:
            tokens.extend([w] * count)
    return np.asarray(sorted(tokens), dtype=np.int64)


@njit(cache=True)
def _gibbs_train(doc_ids, word_ids, n_topics, n_words, alpha, beta,
                 iterations, seed):
    np.random.seed(seed)
    n_tokens = doc_ids.shape[0]
    n_docs = doc_ids.max() + 1 if n_tokens > 0 else 0
    z = np.empty(n_tokens, dtype=np.int64)
    n_dk = np.zeros((n_docs, n_topics), dtype=np.int64)
    n_kw = np.zeros((n_topics, n_words), dtype=np.int64)
    n_k = np.zeros(n_topics, dtype=np.int64)
    for t in range(n_tokens):
        k = np.random.randint(0, n_topics)
        z[t] = k
        n_dk[doc_ids[t], k] += 1
        n_kw[k, word_ids[t]] += 1
        n_k[k] += 1
    probs = np.empty(n_topics, dtype=np.float64)
    for _it in range(iterations):
        for t in range(n_tokens):
            d = doc_ids[t]
            w = word_ids[t]
            k = z[t]
            n_dk[d, k] -= 1
            n_kw[k, w] -= 1
            n_k[k] -= 1
            total = 0.0
            for kk in range(n_topics):
                total += ((n_dk[d, kk] + alpha) * (n_kw[kk, w] + beta)
                          / (n_k[kk] + n_words * beta))
                probs[kk] = total
            u = np.random.random() * total
            k = 0
            while probs[k] < u and k < n_topics - 1:
                k += 1
            z[t] = k
            n_dk[d, k] += 1
            n_kw[k, w] += 1
            n_k[k] += 1
    return n_kw, n_k, n_dk


@njit(cache=True)
def _gibbs_infer(word_ids, n_kw, n_k, alpha, beta, iterations, burn_in, seed):
    np.random.seed(seed)
    n_topics, n_words = n_kw.shape
    n_tokens = word_ids.shape[0]
    z = np.empty(n_tokens, dtype=np.int64)
    local_dk = np.zeros(n_topics, dtype=np.int64)
    for t in range(n_tokens):
        k = np.random.randint(0, n_topics)
        z[t] = k
        local_dk[k] += 1
    theta_sum = np.zeros(n_topics, dtype=np.float64)
    samples = 0
    probs = np.empty(n_topics, dtype=np.float64)
    for it in range(iterations):
        for t in range(n_tokens):
            w = word_ids[t]
            k = z[t]
            local_dk[k] -= 1
            total = 0.0
            for kk in range(n_topics):
                total += ((local_dk[kk] + alpha) * (n_kw[kk, w] + beta)
                          / (n_k[kk] + n_words * beta))
                probs[kk] = total
            u = np.random.random() * total
            k = 0
            while probs[k] < u and k < n_topics - 1:
                k += 1
            z[t] = k
            local_dk[k] += 1
        if it >= burn_in:
            denom = n_tokens + n_topics * alpha
            for kk in range(n_topics):
                theta_sum[kk] += (local_dk[kk] + alpha) / denom
            samples += 1
    return theta_sum, samples


def train(bags: Sequence[BagOfLinks], vocabulary: Vocabulary, n_topics: int,
          alpha: float | None = None, beta: float = DEFAULT_BETA,
          iterations: int = DEFAULT_TRAIN_ITERATIONS,
          seed: int = 0) -> TopicModel:
    """Collapsed Gibbs training; deterministic for a fixed seed."""
    if n_topics < 2:
        raise TopicModelError("n_topics must be >= 2")
    if iterations < 1:
        raise TopicModelError("iterations must be >= 1")
    if n_topics > len(vocabulary):
        warnings.warn("more topics than vocabulary entries; some topics "
                      "will stay empty", stacklevel=2)
    if alpha is None:
        alpha = default_alpha(n_topics)

    doc_ids: list[int] = []
    word_ids: list[int] = []
    for d, bag in enumerate(bags):
        tokens = _bag_to_tokens(bag, vocabulary)
        doc_ids.extend([d] * len(tokens))
        word_ids.extend(tokens.tolist())
    if not doc_ids:
        raise TopicModelError("empty corpus")

    n_kw, n_k, _n_dk = _gibbs_train(
        np.asarray(doc_ids, dtype=np.int64),
        np.asarray(word_ids, dtype=np.int64),
        n_topics, len(vocabulary), float(alpha), float(beta),
        int(iterations), seed & 0xFFFFFFFF)
    model = TopicModel(n_topics=n_topics, alpha=float(alpha), beta=float(beta),
                       topic_concept_counts=n_kw, topic_totals=n_k,
                       vocabulary=vocabulary, seed=seed)
    model.validate()
    return model


def infer(model: TopicModel, bag: BagOfLinks,
          iterations: int = DEFAULT_INFER_ITERATIONS,
          burn_in: int = DEFAULT_BURN_IN,
          seed: int = 0) -> np.ndarray:
    """Fold-in Gibbs with frozen topic-concept counts.

    Returns the average of post-burn-in smoothed document-topic estimates.
    Concepts outside the vocabulary are skipped; a bag with no known
    concepts yields the uniform prior 1/K.
    """
    if iterations <= burn_in:
        raise TopicModelError("iterations must exceed burn_in")
    tokens = _bag_to_tokens(bag, model.vocabulary)
    if len(tokens) == 0:
        return np.full(model.n_topics, 1.0 / model.n_topics)
    theta_sum, samples = _gibbs_infer(
        tokens, model.topic_concept_counts, model.topic_totals,
        model.alpha, model.beta, int(iterations), int(burn_in),
        seed & 0xFFFFFFFF)
    theta = theta_sum / samples
    return theta / theta.sum()


def top_concepts(model: TopicModel, topic: int, n: int = 5) -> list[str]:
    """Concepts of one topic ranked by smoothed probability, ties by id."""
    if not (0 <= topic < model.n_topics):
        raise TopicModelError(f"topic {topic} out of range")
    if n < 1:
        raise TopicModelError("n must be >= 1")
    phi_row = model.phi()[topic]
    order = sorted(range(len(model.vocabulary)),
                   key=lambda w: (-phi_row[w], model.vocabulary.concepts[w]))
    return [model.vocabulary.concepts[w] for w in order[:n]]


# --- serialization ---------------------------------------------------------

def save_topic_model(model: TopicModel, path: str | Path) -> None:
    """Binary layout: magic, version, K, alpha, beta, vocabulary, sparse
    (topic, concept-ordinal, count) triples, topic totals, seed."""
    with open(path, "wb") as f:
        f.write(TOPIC_MAGIC)
        f.write(struct.pack("<I", TOPIC_VERSION))
        f.write(struct.pack("<I", model.n_topics))
        f.write(struct.pack("<dd", model.alpha, model.beta))
        f.write(struct.pack("<Q", len(model.vocabulary)))
        for qid in model.vocabulary.concepts:
            _write_str(f, qid)
        rows, cols = np.nonzero(model.topic_concept_counts)
        f.write(struct.pack("<Q", len(rows)))
        for k, w in zip(rows, cols):
            f.write(struct.pack("<IQq", int(k), int(w),
                                int(model.topic_concept_counts[k, w])))
        f.write(np.asarray(model.topic_totals, dtype="<i8").tobytes())
        f.write(struct.pack("<I", model.seed & 0xFFFFFFFF))


def load_topic_model(path: str | Path) -> TopicModel:
    with open(path, "rb") as f:
        if f.read(4) != TOPIC_MAGIC:
            raise TopicModelError(f"{path}: not a topic model file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != TOPIC_VERSION:
            raise TopicModelError(f"{path}: unsupported version {version}")
        (n_topics,) = struct.unpack("<I", f.read(4))
        alpha, beta = struct.unpack("<dd", f.read(16))
        (n_words,) = struct.unpack("<Q", f.read(8))
        concepts = [_read_str(f) for _ in range(n_words)]
        (nnz,) = struct.unpack("<Q", f.read(8))
        counts = np.zeros((n_topics, n_words), dtype=np.int64)
        for _ in range(nnz):
            k, w, c = struct.unpack("<IQq", f.read(20))
            counts[k, w] = c
        totals = np.frombuffer(f.read(8 * n_topics), dtype="<i8").astype(np.int64)
        (seed,) = struct.unpack("<I", f.read(4))
    model = TopicModel(n_topics=n_topics, alpha=alpha, beta=beta,
                       topic_concept_counts=counts, topic_totals=totals,
                       vocabulary=Vocabulary(concepts=concepts), seed=seed)
    model.validate()
    return model


def dump_topic_model_json(model: TopicModel, path: str | Path) -> None:
    payload = {
        "n_topics": model.n_topics,
        "alpha": model.alpha,
        "beta": model.beta,
        "seed": model.seed,
        "concepts": model.vocabulary.concepts,
        "topic_concept_counts": model.topic_concept_counts.tolist(),
        "topic_totals": model.topic_totals.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))


def write_topic_vectors(rows: Iterable[tuple[str, str, np.ndarray]],
                        path: str | Path) -> int:
    """One line per document: {"qid": ..., "lang": ..., "theta": [...]}."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for qid, lang, theta in rows:
            f.write(json.dumps({"qid": qid, "lang": lang,
                                "theta": [float(x) for x in theta]}) + "\n")
            count += 1
    return count


def read_topic_vectors(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(json.loads(line))
    return out
