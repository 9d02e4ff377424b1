"""Evaluation harness: masked-link disambiguation accuracy, intruder task
generation, language-bias regression, language distance matrices and
supervised classification over topic vectors.

All procedures are pure functions of their inputs plus a seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.cluster.hierarchy import leaves_list, linkage

from .anchors import AnchorDictionary
from .densify import (AdjacencyMatrix, FactorModel, disambiguate, factorize)
from .topics import TopicModel, top_concepts

BUCKETS = {
    "[1,inf]": (1, None),
    "[2,inf]": (2, None),
    "[1,10]": (1, 10),
    "[2,10]": (2, 10),
}

DEFAULT_MASK_FRACTION = 0.05
INTRUDER_MEMBERS = 5
INTRUDER_PRESENTATION = 6
DEFAULT_RANK_LOW = 50
DEFAULT_RANK_HIGH = 10


class EvalError(Exception):
    pass


# --- ROC AUC ---------------------------------------------------------------

def auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney AUC with the midrank tie convention."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --- logistic regression ---------------------------------------------------

LOG_ODDS_EPS = 1e-6


def log_odds(features: np.ndarray) -> np.ndarray:
    clamped = np.clip(features, LOG_ODDS_EPS, 1.0 - LOG_ODDS_EPS)
    return np.log(clamped / (1.0 - clamped))


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    transform: str = "identity"

    def decision(self, features: np.ndarray) -> np.ndarray:
        x = log_odds(features) if self.transform == "log_odds" else features
        return x @ self.weights + self.bias


def fit_logistic(features: np.ndarray, labels: np.ndarray,
                 transform: str = "identity",
                 l2: float = 1e-4, epochs: int = 500,
                 learning_rate: float = 0.1, seed: int = 0) -> LogisticModel:
    """Full-batch gradient descent on L2-penalized cross-entropy."""
    if transform not in ("identity", "log_odds"):
        raise EvalError(f"unknown transform {transform!r}")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.min() == labels.max():
        raise EvalError("training set contains a single class")
    x = log_odds(features) if transform == "log_odds" else np.asarray(features)
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=x.shape[1])
    b = 0.0
    n = len(labels)
    for _epoch in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        grad_w = x.T @ (p - labels) / n + l2 * w
        grad_b = float(np.mean(p - labels))
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b
    return LogisticModel(weights=w, bias=b, transform=transform)


# --- masked-link disambiguation --------------------------------------------

@dataclass
class BucketResult:
    accuracy: float
    random_baseline: float
    count: int


@dataclass
class DisambigReport:
    lang: str
    mask_fraction: float
    seed: int
    buckets: dict[str, BucketResult] = field(default_factory=dict)
    n_masked: int = 0
    n_skipped_no_anchor: int = 0

    def to_dict(self) -> dict:
        return {
            "lang": self.lang,
            "mask_fraction": self.mask_fraction,
            "seed": self.seed,
            "n_masked": self.n_masked,
            "n_skipped_no_anchor": self.n_skipped_no_anchor,
            "buckets": {
                name: {"accuracy": r.accuracy,
                       "random_baseline": r.random_baseline,
                       "count": r.count}
                for name, r in self.buckets.items()
            },
        }

    def to_tsv(self) -> str:
        header = "lang\tbucket\taccuracy\trandom_baseline\tcount"
        lines = [header]
        for name, r in self.buckets.items():
            lines.append(f"{self.lang}\t{name}\t{r.accuracy:.4f}"
                         f"\t{r.random_baseline:.4f}\t{r.count}")
        return "\n".join(lines) + "\n"


def _anchors_by_target(dictionary: AnchorDictionary
                       ) -> dict[str, tuple[str, int]]:
    """Most frequent anchor phrase per reachable target concept."""
    best: dict[str, tuple[str, int]] = {}
    for phrase in sorted(dictionary.entries):
        entry = dictionary.entries[phrase]
        for qid, count in entry.candidates.items():
            if qid not in best or count > best[qid][1]:
                best[qid] = (phrase, count)
    return best


def eval_disambiguation(A: AdjacencyMatrix, dictionary: AnchorDictionary,
                        mask_fraction: float = DEFAULT_MASK_FRACTION,
                        rank: int = 150, regularization: float = 0.05,
                        iterations: int = 10, seed: int = 0) -> DisambigReport:
    """Mask stored adjacency entries, refactorize, and measure how often the
    top-scored candidate equals the masked link's true target.

    Entry weights are not recomputed after masking.  Masked links whose
    target is reachable through no anchor phrase are excluded and counted.
    """
    if not (0.0 < mask_fraction < 1.0):
        raise EvalError("mask_fraction must be in (0, 1)")
    coo = A.matrix.tocoo()
    nnz = coo.nnz
    if nnz == 0:
        raise EvalError("no maskable entries")
    rng = np.random.default_rng(seed)
    n_mask = max(1, int(round(mask_fraction * nnz)))
    masked_idx = rng.choice(nnz, size=n_mask, replace=False)
    keep = np.ones(nnz, dtype=bool)
    keep[masked_idx] = False
    masked_matrix = sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])),
        shape=A.matrix.shape)
    masked_A = AdjacencyMatrix(lang=A.lang, n_articles=A.n_articles,
                               index=A.index, matrix=masked_matrix)
    model = factorize(masked_A, rank=rank, regularization=regularization,
                      iterations=iterations, seed=seed)

    anchor_by_target = _anchors_by_target(dictionary)
    report = DisambigReport(lang=A.lang, mask_fraction=mask_fraction,
                            seed=seed, n_masked=n_mask)
    results = []  # (n_candidates, correct)
    for idx in sorted(masked_idx):
        i = int(coo.row[idx])
        j = int(coo.col[idx])
        source = A.index.concepts[i]
        target = A.index.concepts[j]
        hit = anchor_by_target.get(target)
        if hit is None:
            report.n_skipped_no_anchor += 1
            continue
        entry = dictionary.entries[hit[0]]
        predicted = disambiguate(model, source, entry)
        results.append((len(entry.candidates), predicted == target))

    for name, (lo, hi) in BUCKETS.items():
        rows = [(c, ok) for c, ok in results
                if c >= lo and (hi is None or c <= hi)]
        if not rows:
            report.buckets[name] = BucketResult(accuracy=float("nan"),
                                                random_baseline=float("nan"),
                                                count=0)
            continue
        accuracy = sum(ok for _c, ok in rows) / len(rows)
        baseline = float(np.mean([1.0 / c for c, _ok in rows]))
        report.buckets[name] = BucketResult(accuracy=accuracy,
                                            random_baseline=baseline,
                                            count=len(rows))
    return report


# --- intruder tasks --------------------------------------------------------

@dataclass
class IntruderTask:
    topic: int
    members: list[str]
    intruder: str
    presentation: list[str]
    answer_index: int

    def to_dict(self, with_answer: bool = True) -> dict:
        out = {"topic": self.topic, "presentation": self.presentation}
        if with_answer:
            out["members"] = self.members
            out["intruder"] = self.intruder
            out["answer_index"] = self.answer_index
        return out


def generate_intruders(model: TopicModel, n_topics: int, seed: int = 0,
                       members_n: int = INTRUDER_MEMBERS,
                       rank_low: int = DEFAULT_RANK_LOW,
                       rank_high: int = DEFAULT_RANK_HIGH
                       ) -> list[IntruderTask]:
    """For sampled topics, pick the top concepts plus one planted intruder.

    The intruder maximizes (rank within the topic - best rank within any
    other topic), restricted to concepts ranked at or below ``rank_low`` in
    the topic and within the top ``rank_high`` of some other topic.  If no
    concept meets the thresholds, the restriction is dropped and the
    max-rank-difference concept outside the member list is used.
    """
    if model.n_topics < 2:
        raise EvalError("intruder tasks need at least 2 topics")
    if n_topics > model.n_topics:
        raise EvalError("cannot sample more topics than the model has")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(model.n_topics, size=n_topics, replace=False))

    n_words = len(model.vocabulary)
    phi = model.phi()
    # rank[k][w]: position of concept w in topic k's sorted list (0-based)
    ranks = np.empty((model.n_topics, n_words), dtype=np.int64)
    for k in range(model.n_topics):
        order = sorted(range(n_words),
                       key=lambda w: (-phi[k, w], model.vocabulary.concepts[w]))
        for pos, w in enumerate(order):
            ranks[k, w] = pos

    tasks = []
    for topic in chosen:
        members = top_concepts(model, topic, members_n)
        member_set = set(members)
        other = [k for k in range(model.n_topics) if k != topic]
        best_other = ranks[other].min(axis=0)
        diff = ranks[topic] - best_other

        eligible_ws = [w for w in range(n_words)
                       if ranks[topic, w] >= rank_low
                       and best_other[w] < rank_high
                       and model.vocabulary.concepts[w] not in member_set]
        if not eligible_ws:
            eligible_ws = [w for w in range(n_words)
                           if model.vocabulary.concepts[w] not in member_set]
        if not eligible_ws:
            raise EvalError("vocabulary too small for intruder selection")
        intruder_w = max(eligible_ws,
                         key=lambda w: (diff[w],
                                        model.vocabulary.concepts[w]))
        intruder = model.vocabulary.concepts[intruder_w]
        presentation = members + [intruder]
        rng.shuffle(presentation)
        tasks.append(IntruderTask(
            topic=int(topic), members=members, intruder=intruder,
            presentation=presentation,
            answer_index=presentation.index(intruder)))
    return tasks


# --- language bias ---------------------------------------------------------

def _split_80_20(n: int, labels: np.ndarray, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified 80/20 split; returns (train_idx, test_idx)."""
    train_idx: list[int] = []
    test_idx: list[int] = []
    for value in np.unique(labels):
        idx = np.flatnonzero(labels == value)
        rng.shuffle(idx)
        cut = max(1, int(round(0.8 * len(idx))))
        if cut == len(idx) and len(idx) > 1:
            cut -= 1
        train_idx.extend(idx[:cut])
        test_idx.extend(idx[cut:])
    return np.asarray(sorted(train_idx)), np.asarray(sorted(test_idx))


def language_bias(vectors_by_lang: Mapping[str, np.ndarray],
                  sample_per_lang: int, seed: int = 0
                  ) -> dict[str, dict]:
    """One-vs-all per-language logistic regression on log-odds topic vectors.

    Negatives are drawn evenly from the other languages; sampling is without
    replacement and caps at corpus size with a warning.
    """
    langs = [l for l in sorted(vectors_by_lang) if len(vectors_by_lang[l]) > 0]
    for lang in sorted(vectors_by_lang):
        if lang not in langs:
            warnings.warn(f"language {lang!r} has no documents; skipped",
                          stacklevel=2)
    if len(langs) < 2:
        raise EvalError("language bias analysis needs >= 2 languages")

    out: dict[str, dict] = {}
    rng = np.random.default_rng(seed)
    for lang in langs:
        pool = np.asarray(vectors_by_lang[lang], dtype=np.float64)
        n_pos = min(sample_per_lang, len(pool))
        if n_pos < sample_per_lang:
            warnings.warn(f"{lang}: only {n_pos} documents available "
                          f"(requested {sample_per_lang})", stacklevel=2)
        pos = pool[rng.choice(len(pool), size=n_pos, replace=False)]
        others = [l for l in langs if l != lang]
        per_other = max(1, n_pos // len(others))
        neg_parts = []
        for other_lang in others:
            other_pool = np.asarray(vectors_by_lang[other_lang], dtype=np.float64)
            take = min(per_other, len(other_pool))
            neg_parts.append(other_pool[rng.choice(len(other_pool), size=take,
                                                   replace=False)])
        neg = np.vstack(neg_parts)
        features = np.vstack([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        train_idx, test_idx = _split_80_20(len(labels), labels, rng)
        clf = fit_logistic(features[train_idx], labels[train_idx],
                           transform="log_odds", seed=seed)
        scores = clf.decision(features[test_idx])
        out[lang] = {
            "weights": clf.weights.tolist(),
            "bias": clf.bias,
            "auc": auc(scores, labels[test_idx].astype(bool)),
            "n_train": int(len(train_idx)),
            "n_test": int(len(test_idx)),
        }
    return out


# --- language distances ----------------------------------------------------

def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - (a @ b) / (na * nb))


def language_distances(vectors_by_lang: Mapping[str, np.ndarray | dict],
                       mode: str = "all"
                       ) -> tuple[list[str], np.ndarray, list[str]]:
    """Pairwise cosine distances between language editions.

    mode="all": each language is its mean topic vector (values are arrays of
    per-article vectors).  mode="common": values are {article_qid: vector}
    mappings; the distance is the mean per-article cosine distance over
    articles present in every language.  Returns (languages, matrix,
    leaf-ordered languages from average-linkage clustering).
    """
    langs = [l for l in sorted(vectors_by_lang)
             if len(vectors_by_lang[l]) > 0]
    if len(langs) < 2:
        raise EvalError("need at least 2 languages with vectors")
    n = len(langs)
    dist = np.zeros((n, n))
    if mode == "all":
        means = {l: np.mean(np.asarray(vectors_by_lang[l], dtype=np.float64),
                            axis=0)
                 for l in langs}
        for a in range(n):
            for b in range(a + 1, n):
                d = _cosine_distance(means[langs[a]], means[langs[b]])
                dist[a, b] = dist[b, a] = d
    elif mode == "common":
        common = set.intersection(*(set(vectors_by_lang[l]) for l in langs))
        if not common:
            raise EvalError("no articles common to all languages")
        common = sorted(common)
        for a in range(n):
            for b in range(a + 1, n):
                va = vectors_by_lang[langs[a]]
                vb = vectors_by_lang[langs[b]]
                d = float(np.mean([
                    _cosine_distance(np.asarray(va[qid], dtype=np.float64),
                                     np.asarray(vb[qid], dtype=np.float64))
                    for qid in common]))
                dist[a, b] = dist[b, a] = d
    else:
        raise EvalError(f"unknown mode {mode!r}")

    condensed = dist[np.triu_indices(n, k=1)]
    order = leaves_list(linkage(condensed, method="average"))
    leaf_order = [langs[i] for i in order]
    return langs, dist, leaf_order


def distances_to_tsv(langs: list[str], matrix: np.ndarray) -> str:
    lines = ["\t".join([""] + langs)]
    for i, lang in enumerate(langs):
        lines.append("\t".join([lang] + [f"{matrix[i, j]:.6f}"
                                         for j in range(len(langs))]))
    return "\n".join(lines) + "\n"


# --- supervised classification ---------------------------------------------

def supervised_topic_eval(train_vectors: np.ndarray,
                          train_labels: Sequence[set | frozenset | list],
                          test_vectors: np.ndarray,
                          test_labels: Sequence[set | frozenset | list],
                          seed: int = 0) -> dict:
    """Per-class one-vs-rest logistic regression over multilabel rows.

    Each class trains on its positives plus negatives sampled evenly from
    the other classes; reports per-class and macro-averaged test AUC.
    Classes with fewer than 2 training positives, or absent from the test
    set, are skipped.
    """
    train_vectors = np.asarray(train_vectors, dtype=np.float64)
    test_vectors = np.asarray(test_vectors, dtype=np.float64)
    train_sets = [set(labels) for labels in train_labels]
    test_sets = [set(labels) for labels in test_labels]
    classes = sorted(set.union(set(), *train_sets))

    rng = np.random.default_rng(seed)
    per_class: dict[str, float] = {}
    skipped: list[str] = []
    for cls in classes:
        pos_idx = np.asarray([i for i, s in enumerate(train_sets) if cls in s])
        if len(pos_idx) < 2:
            warnings.warn(f"class {cls!r}: fewer than 2 positives; skipped",
                          stacklevel=2)
            skipped.append(cls)
            continue
        other_classes = [c for c in classes if c != cls]
        by_class = {c: [i for i, s in enumerate(train_sets)
                        if c in s and cls not in s]
                    for c in other_classes}
        by_class = {c: idx for c, idx in by_class.items() if idx}
        if not by_class:
            skipped.append(cls)
            continue
        per_other = max(1, len(pos_idx) // len(by_class))
        neg_idx: list[int] = []
        for c in sorted(by_class):
            idx = np.asarray(by_class[c])
            take = min(per_other, len(idx))
            neg_idx.extend(rng.choice(idx, size=take, replace=False).tolist())
        neg_idx = sorted(set(neg_idx) - set(pos_idx.tolist()))
        if not neg_idx:
            skipped.append(cls)
            continue
        features = np.vstack([train_vectors[pos_idx], train_vectors[neg_idx]])
        labels = np.concatenate([np.ones(len(pos_idx)),
                                 np.zeros(len(neg_idx))])
        clf = fit_logistic(features, labels, transform="identity", seed=seed)

        test_y = np.asarray([cls in s for s in test_sets])
        if test_y.sum() == 0 or test_y.sum() == len(test_y):
            skipped.append(cls)
            continue
        scores = clf.decision(test_vectors)
        per_class[cls] = auc(scores, test_y)

    if not per_class:
        raise EvalError("no class could be evaluated")
    return {
        "per_class_auc": per_class,
        "macro_auc": float(np.mean(list(per_class.values()))),
        "skipped_classes": skipped,
    }
