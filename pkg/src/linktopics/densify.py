"""Link densification: IDF-weighted adjacency matrix, ALS factorization,
candidate scoring and greedy longest-match linking.

The adjacency matrix covers the union of article concepts and link-target
concepts; entry (i, j) holds -ln(d_j / N) where d_j is the number of distinct
articles linking to j and N the number of articles.  Natural log is used
throughout; any other base only rescales the matrix uniformly, which the
factorization absorbs and the argmax disambiguation ignores.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .anchors import AnchorDictionary, AnchorEntry, eligible, tokenize
from .corpus import Article

DEFAULT_RANK = 150
DEFAULT_LAMBDA = 0.05
DEFAULT_ITERATIONS = 10
LAMBDA_FLOOR = 1e-9

FACTOR_MAGIC = b"WPDA"
FACTOR_VERSION = 1


class DensifyError(Exception):
    pass


@dataclass
class ConceptIndex:
    """Bijection between concept ids and matrix ordinals."""

    concepts: list[str]
    ordinals: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.ordinals:
            self.ordinals = {qid: i for i, qid in enumerate(self.concepts)}

    def __len__(self) -> int:
        return len(self.concepts)

    def get(self, qid: str) -> int | None:
        return self.ordinals.get(qid)


@dataclass
class AdjacencyMatrix:
    lang: str
    n_articles: int
    index: ConceptIndex
    matrix: sp.csr_matrix  # square over the full index, weights > 0 only


@dataclass
class FactorModel:
    lang: str
    rank: int
    U: np.ndarray  # rows: articles as link sources
    V: np.ndarray  # rows: articles as link targets
    index: ConceptIndex
    seed: int
    regularization: float
    iterations: int
    objective_history: list[float] = field(default_factory=list)


@dataclass
class BagOfLinks:
    concept: str
    lang: str
    counts: Counter = field(default_factory=Counter)
    provenance: dict[str, str] = field(default_factory=dict)  # existing|densified

    @property
    def size(self) -> int:
        return sum(self.counts.values())


def build_adjacency(articles: Iterable[Article], lang: str | None = None
                    ) -> AdjacencyMatrix:
    """Build the weighted hyperlink adjacency matrix for one language.

    Duplicate links within one article collapse to a single entry; targets
    linked from every article get weight -ln(N/N) = 0 and are dropped.
    """
    edges: set[tuple[str, str]] = set()
    sources: list[str] = []
    targets_only: list[str] = []
    seen: set[str] = set()
    for article in articles:
        if lang is None:
            lang = article.lang
        elif article.lang != lang:
            raise DensifyError("adjacency matrix must be single-language")
        if article.concept not in seen:
            seen.add(article.concept)
            sources.append(article.concept)
        for link in article.links:
            edges.add((article.concept, link.target))
    if not sources:
        raise DensifyError("empty corpus")
    for _i, j in sorted(edges):
        if j not in seen:
            seen.add(j)
            targets_only.append(j)
    # article concepts first, then target-only concepts, both in first-seen order
    index = ConceptIndex(concepts=sources + targets_only)
    n_articles = len(sources)

    in_degree: Counter = Counter(j for _i, j in edges)
    rows, cols, vals = [], [], []
    for i, j in edges:
        weight = -np.log(in_degree[j] / n_articles)
        if weight <= 0.0:
            continue
        rows.append(index.get(i))
        cols.append(index.get(j))
        vals.append(weight)
    m = len(index)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    matrix.sum_duplicates()
    return AdjacencyMatrix(lang=lang, n_articles=n_articles, index=index,
                           matrix=matrix)


# --- ALS -------------------------------------------------------------------

def _objective_all(A: sp.csr_matrix, U: np.ndarray, V: np.ndarray,
                   lam: float) -> float:
    # sum over all (i,j) of (a_ij - u_i.v_j)^2, expanded so the dense product
    # is never materialized: ||A||^2 - 2*sum_nnz a_ij u_i.v_j + tr(U'U V'V)
    coo = A.tocoo()
    cross = float(np.sum(coo.data * np.einsum(
        "ij,ij->i", U[coo.row], V[coo.col])))
    gram = float(np.sum((U.T @ U) * (V.T @ V)))
    norm_a = float(np.sum(coo.data ** 2))
    return (norm_a - 2.0 * cross + gram
            + lam * (float(np.sum(U * U)) + float(np.sum(V * V))))


def _objective_observed(A: sp.csr_matrix, U: np.ndarray, V: np.ndarray,
                        lam: float) -> float:
    coo = A.tocoo()
    pred = np.einsum("ij,ij->i", U[coo.row], V[coo.col])
    return (float(np.sum((coo.data - pred) ** 2))
            + lam * (float(np.sum(U * U)) + float(np.sum(V * V))))


def _solve_rows_observed(mat: sp.csr_matrix, other: np.ndarray, lam: float,
                         out: np.ndarray) -> None:
    r = other.shape[1]
    reg = lam * np.eye(r)
    indptr, indices, data = mat.indptr, mat.indices, mat.data
    for i in range(mat.shape[0]):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            out[i] = 0.0
            continue
        M = other[indices[lo:hi]]
        out[i] = np.linalg.solve(M.T @ M + reg, M.T @ data[lo:hi])


def factorize(A: AdjacencyMatrix, rank: int = DEFAULT_RANK,
              regularization: float = DEFAULT_LAMBDA,
              iterations: int = DEFAULT_ITERATIONS,
              seed: int = 0,
              loss: str = "all") -> FactorModel:
    """Alternating least squares decomposition of the adjacency matrix.

    loss="all": unstored entries contribute target value 0 with uniform
    confidence, so each half-sweep reduces to one shared Gramian solve
    (O(nnz*r + m*r^2) per sweep, dense matrix never formed).
    loss="observed": matrix-completion variant over stored entries only
    (used when masked entries must be treated as missing, not zero).

    Deterministic given the seed; the full objective is recorded per sweep
    and checked to be non-increasing.
    """
    m = len(A.index)
    if rank < 1 or rank > m:
        raise DensifyError(f"rank must be in [1, {m}], got {rank}")
    if iterations < 1:
        raise DensifyError("iterations must be >= 1")
    if regularization < 0:
        raise DensifyError("regularization must be >= 0")
    if loss not in ("all", "observed"):
        raise DensifyError(f"unknown loss {loss!r}")
    lam = max(regularization, LAMBDA_FLOOR)

    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(rank)
    U = rng.normal(0.0, scale, size=(m, rank))
    V = rng.normal(0.0, scale, size=(m, rank))

    mat = A.matrix.tocsr()
    mat_t = A.matrix.T.tocsr()
    objective = _objective_all if loss == "all" else _objective_observed

    history = [objective(mat, U, V, lam)]
    eye = np.eye(rank)
    for _sweep in range(iterations):
        if loss == "all":
            # identical normal equations for every row: one solve per factor
            U = np.linalg.solve(V.T @ V + lam * eye, (mat @ V).T).T
            V = np.linalg.solve(U.T @ U + lam * eye, (mat_t @ U).T).T
        else:
            _solve_rows_observed(mat, V, lam, U)
            _solve_rows_observed(mat_t, U, lam, V)
        value = objective(mat, U, V, lam)
        if value > history[-1] * (1 + 1e-9) + 1e-9:
            raise DensifyError(
                f"objective increased: {history[-1]} -> {value}")
        history.append(value)

    return FactorModel(lang=A.lang, rank=rank, U=U, V=V, index=A.index,
                       seed=seed, regularization=regularization,
                       iterations=iterations, objective_history=history)


def score(model: FactorModel, source: str, target: str) -> float | None:
    """Dot product of the source and target embeddings; None if unindexed."""
    i = model.index.get(source)
    j = model.index.get(target)
    if i is None or j is None:
        return None
    return float(model.U[i] @ model.V[j])


def disambiguate(model: FactorModel, source: str,
                 entry: AnchorEntry) -> str | None:
    """Pick the candidate with the largest score.

    Ties break by higher candidate count, then lexicographic concept id;
    returns None when no candidate is indexed.
    """
    i = model.index.get(source)
    if i is None:
        return None
    best: tuple[float, int, str] | None = None
    best_qid: str | None = None
    for qid in sorted(entry.candidates):
        j = model.index.get(qid)
        if j is None:
            continue
        key = (float(model.U[i] @ model.V[j]), entry.candidates[qid], qid)
        # qid ascending on full ties: first-seen wins because of the sort
        if best is None or key[0] > best[0] or (
                key[0] == best[0] and key[1] > best[1]):
            best = key
            best_qid = qid
    return best_qid


def densify_article(article: Article, dictionary: AnchorDictionary,
                    model: FactorModel,
                    threshold: float | None = None,
                    max_candidates: int | None = None) -> BagOfLinks:
    """Greedy left-to-right longest-match linking of unlinked mentions.

    Existing link spans are hard boundaries: they are never re-linked, never
    crossed by a new match, and contribute their targets to the bag.  At each
    token position n-grams are tried longest first (4, 3, 2, 1).
    """
    from .anchors import DEFAULT_LINK_THRESHOLD, DEFAULT_MAX_CANDIDATES

    threshold = DEFAULT_LINK_THRESHOLD if threshold is None else threshold
    max_candidates = (DEFAULT_MAX_CANDIDATES if max_candidates is None
                      else max_candidates)

    bag = BagOfLinks(concept=article.concept, lang=article.lang)
    for link in article.links:
        bag.counts[link.target] += 1
        bag.provenance[link.target] = "existing"

    covered = sorted((l.start, l.end) for l in article.links)

    def overlaps_existing(start: int, end: int) -> bool:
        return any(start < b and a < end for a, b in covered)

    tokens = tokenize(article.text)
    pos = 0
    while pos < len(tokens):
        _tok, tok_start, tok_end = tokens[pos]
        if overlaps_existing(tok_start, tok_end):
            pos += 1
            continue
        matched = False
        for n in range(dictionary.ngram_max, 0, -1):
            if pos + n > len(tokens):
                continue
            span_start = tokens[pos][1]
            span_end = tokens[pos + n - 1][2]
            if overlaps_existing(span_start, span_end):
                continue
            phrase = " ".join(tok for tok, _s, _e in tokens[pos : pos + n])
            entry = dictionary.entries.get(phrase)
            if entry is None or not eligible(entry, threshold, max_candidates):
                continue
            target = disambiguate(model, article.concept, entry)
            if target is None:
                continue
            bag.counts[target] += 1
            bag.provenance.setdefault(target, "densified")
            pos += n
            matched = True
            break
        if not matched:
            pos += 1
    return bag


# --- bag serialization -----------------------------------------------------

def bag_to_record(bag: BagOfLinks) -> dict:
    return {
        "qid": bag.concept,
        "lang": bag.lang,
        "links": [
            {"qid": qid, "count": count,
             "provenance": bag.provenance.get(qid, "densified")}
            for qid, count in sorted(bag.counts.items())
        ],
    }


def record_to_bag(record: dict) -> BagOfLinks:
    bag = BagOfLinks(concept=record["qid"], lang=record["lang"])
    for item in record["links"]:
        bag.counts[item["qid"]] = item["count"]
        bag.provenance[item["qid"]] = item.get("provenance", "existing")
    return bag


def write_bags(bags: Iterable[BagOfLinks], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for bag in bags:
            f.write(json.dumps(bag_to_record(bag), sort_keys=True) + "\n")
            count += 1
    return count


def read_bags(path: str | Path) -> list[BagOfLinks]:
    bags = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                bags.append(record_to_bag(json.loads(line)))
    return bags


# --- model files -----------------------------------------------------------

def _write_str(f, s: str) -> None:
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_str(f) -> str:
    (n,) = struct.unpack("<I", f.read(4))
    return f.read(n).decode("utf-8")


def save_factor_model(model: FactorModel, path: str | Path) -> None:
    """Little-endian binary layout: magic, version, lang, rank, N, concept
    table, then U and V as row-major float32."""
    with open(path, "wb") as f:
        f.write(FACTOR_MAGIC)
        f.write(struct.pack("<I", FACTOR_VERSION))
        _write_str(f, model.lang)
        f.write(struct.pack("<I", model.rank))
        f.write(struct.pack("<Q", len(model.index)))
        for qid in model.index.concepts:
            _write_str(f, qid)
        f.write(struct.pack("<IiI", model.seed & 0xFFFFFFFF,
                            model.iterations, 0))
        f.write(struct.pack("<d", model.regularization))
        f.write(np.ascontiguousarray(model.U, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.V, dtype="<f4").tobytes())


def load_factor_model(path: str | Path) -> FactorModel:
    with open(path, "rb") as f:
        if f.read(4) != FACTOR_MAGIC:
            raise DensifyError(f"{path}: not a factor model file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FACTOR_VERSION:
            raise DensifyError(f"{path}: unsupported version {version}")
        lang = _read_str(f)
        (rank,) = struct.unpack("<I", f.read(4))
        (m,) = struct.unpack("<Q", f.read(8))
        concepts = [_read_str(f) for _ in range(m)]
        seed, iterations, _pad = struct.unpack("<IiI", f.read(12))
        (regularization,) = struct.unpack("<d", f.read(8))
        U = np.frombuffer(f.read(4 * m * rank), dtype="<f4").reshape(m, rank)
        V = np.frombuffer(f.read(4 * m * rank), dtype="<f4").reshape(m, rank)
    return FactorModel(lang=lang, rank=rank,
                       U=U.astype(np.float64), V=V.astype(np.float64),
                       index=ConceptIndex(concepts=concepts), seed=seed,
                       regularization=regularization, iterations=iterations)


def dump_factor_model_json(model: FactorModel, path: str | Path) -> None:
    """Debug dump for small models."""
    payload = {
        "lang": model.lang,
        "rank": model.rank,
        "seed": model.seed,
        "regularization": model.regularization,
        "iterations": model.iterations,
        "concepts": model.index.concepts,
        "U": model.U.tolist(),
        "V": model.V.tolist(),
        "objective_history": model.objective_history,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))


# --- adjacency files -------------------------------------------------------

ADJ_MAGIC = b"WPAJ"
ADJ_VERSION = 1


def save_adjacency(A: AdjacencyMatrix, path: str | Path) -> None:
    mat = A.matrix.tocsr()
    mat.sort_indices()
    with open(path, "wb") as f:
        f.write(ADJ_MAGIC)
        f.write(struct.pack("<I", ADJ_VERSION))
        _write_str(f, A.lang)
        f.write(struct.pack("<Q", A.n_articles))
        f.write(struct.pack("<Q", len(A.index)))
        for qid in A.index.concepts:
            _write_str(f, qid)
        f.write(struct.pack("<Q", mat.nnz))
        f.write(np.asarray(mat.indptr, dtype="<i8").tobytes())
        f.write(np.asarray(mat.indices, dtype="<i8").tobytes())
        f.write(np.asarray(mat.data, dtype="<f8").tobytes())


def load_adjacency(path: str | Path) -> AdjacencyMatrix:
    with open(path, "rb") as f:
        if f.read(4) != ADJ_MAGIC:
            raise DensifyError(f"{path}: not an adjacency file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != ADJ_VERSION:
            raise DensifyError(f"{path}: unsupported version {version}")
        lang = _read_str(f)
        (n_articles,) = struct.unpack("<Q", f.read(8))
        (m,) = struct.unpack("<Q", f.read(8))
        concepts = [_read_str(f) for _ in range(m)]
        (nnz,) = struct.unpack("<Q", f.read(8))
        indptr = np.frombuffer(f.read(8 * (m + 1)), dtype="<i8")
        indices = np.frombuffer(f.read(8 * nnz), dtype="<i8")
        data = np.frombuffer(f.read(8 * nnz), dtype="<f8")
    matrix = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()),
                           shape=(m, m))
    return AdjacencyMatrix(lang=lang, n_articles=n_articles,
                           index=ConceptIndex(concepts=concepts),
                           matrix=matrix)
