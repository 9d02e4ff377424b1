"""Pipeline stages as functions over on-disk artifacts.

Each stage reads its declared upstream artifacts, writes its declared
outputs, and drops a ``<stage>.manifest.json`` next to them recording input
hashes, the config snapshot and the seed.  Manifests contain no timestamps,
so a deterministic re-run reproduces them byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import build_dictionary, load_dictionary, save_dictionary
from .config import PipelineConfig
from .corpus import (Diagnostics, ingest, load_redirects, load_sitelinks,
                     read_corpus, write_corpus)
from .densify import (build_adjacency, densify_article, factorize,
                      load_adjacency, load_factor_model, read_bags,
                      save_adjacency, save_factor_model, write_bags)
from .evaluation import (distances_to_tsv, eval_disambiguation,
                         generate_intruders, language_bias,
                         language_distances, supervised_topic_eval)
from .topics import (infer, load_topic_model, prune, read_topic_vectors,
                     save_topic_model, train, write_topic_vectors)


class PipelineError(Exception):
    """User-level pipeline failure (bad input, missing artifact)."""


class MissingArtifactError(PipelineError):
    def __init__(self, path: Path, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(
            f"missing artifact {path}; run the `{producer}` subcommand first")


def _require(path: str | Path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage: str, inputs: dict[str, Path],
                   outputs: dict[str, Path], config: dict,
                   seed: int | None, workdir: Path) -> Path:
    manifest = {
        "stage": stage,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in sorted(inputs.items())},
        "outputs": {name: {"path": str(p), "sha256": _sha256(p)}
                    for name, p in sorted(outputs.items())},
    }
    path = workdir / f"{stage}.manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


# --- stages ----------------------------------------------------------------

def stage_ingest(source: str, redirects: str, sitelinks: str, out: str,
                 lang: str | None = None,
                 config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    source_p = _require(source, "ingest")
    redirects_p = _require(redirects, "ingest")
    sitelinks_p = _require(sitelinks, "ingest")
    out_p = Path(out)
    diagnostics = Diagnostics()
    redirect_map = load_redirects(redirects_p)
    sitelink_map = load_sitelinks(sitelinks_p)
    articles = ingest(source_p, redirect_map, sitelink_map, lang=lang,
                      diagnostics=diagnostics)
    n = write_corpus(articles, out_p)
    write_manifest("ingest",
                   {"source": source_p, "redirects": redirects_p,
                    "sitelinks": sitelinks_p},
                   {"corpus": out_p},
                   {"lang": lang}, None, out_p.parent)
    return {"articles": n, "diagnostics": dict(diagnostics.counts),
            "outputs": {"corpus": str(out_p)}}


def stage_build_anchors(corpus: str, lang: str, out: str,
                        config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    corpus_p = _require(corpus, "ingest")
    out_p = Path(out)
    articles = (a for a in read_corpus(corpus_p) if a.lang == lang)
    dictionary = build_dictionary(articles, lang, ngram_max=config.ngram_max)
    save_dictionary(dictionary, out_p)
    write_manifest("build-anchors", {"corpus": corpus_p},
                   {"dictionary": out_p},
                   {"lang": lang, "ngram_max": config.ngram_max},
                   None, out_p.parent)
    return {"entries": len(dictionary.entries),
            "outputs": {"dictionary": str(out_p)}}


def stage_build_adjacency(corpus: str, lang: str, out: str,
                          config: PipelineConfig | None = None) -> dict:
    corpus_p = _require(corpus, "ingest")
    out_p = Path(out)
    articles = (a for a in read_corpus(corpus_p) if a.lang == lang)
    A = build_adjacency(articles, lang)
    save_adjacency(A, out_p)
    write_manifest("build-adjacency", {"corpus": corpus_p},
                   {"adjacency": out_p}, {"lang": lang}, None, out_p.parent)
    return {"n_articles": A.n_articles, "n_concepts": len(A.index),
            "nnz": int(A.matrix.nnz), "outputs": {"adjacency": str(out_p)}}


def stage_factorize(adjacency: str, out: str,
                    config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    adjacency_p = _require(adjacency, "build-adjacency")
    out_p = Path(out)
    A = load_adjacency(adjacency_p)
    rank = min(config.rank, len(A.index))
    model = factorize(A, rank=rank, regularization=config.als_lambda,
                      iterations=config.als_iterations, seed=config.als_seed)
    save_factor_model(model, out_p)
    params = {"rank": rank, "lambda": config.als_lambda,
              "iterations": config.als_iterations}
    write_manifest("factorize", {"adjacency": adjacency_p},
                   {"factor_model": out_p}, params, config.als_seed,
                   out_p.parent)
    return {"rank": rank, "objective": model.objective_history[-1],
            "outputs": {"factor_model": str(out_p)}}


def stage_densify(corpus: str, dictionary: str, factor_model: str, out: str,
                  lang: str, config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    corpus_p = _require(corpus, "ingest")
    dictionary_p = _require(dictionary, "build-anchors")
    model_p = _require(factor_model, "factorize")
    out_p = Path(out)
    dict_ = load_dictionary(dictionary_p)
    model = load_factor_model(model_p)
    sparse_total = 0
    dense_total = 0
    bags = []
    for article in read_corpus(corpus_p):
        if article.lang != lang:
            continue
        bag = densify_article(article, dict_, model,
                              threshold=config.link_threshold,
                              max_candidates=config.max_candidates)
        sparse_total += len(article.links)
        dense_total += bag.size
        bags.append(bag)
    write_bags(bags, out_p)
    ratio = dense_total / sparse_total if sparse_total else float("nan")
    params = {"lang": lang, "link_threshold": config.link_threshold,
              "max_candidates": config.max_candidates}
    write_manifest("densify",
                   {"corpus": corpus_p, "dictionary": dictionary_p,
                    "factor_model": model_p},
                   {"bags": out_p}, params, None, out_p.parent)
    return {"documents": len(bags), "sparse_links": sparse_total,
            "densified_links": dense_total, "densification_ratio": ratio,
            "outputs": {"bags": str(out_p)}}


def stage_train_lda(bags: str, out: str,
                    config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    bags_p = _require(bags, "densify")
    out_p = Path(out)
    all_bags = read_bags(bags_p)
    vocabulary, pruned = prune(all_bags, min_df=config.min_df,
                               min_doc_links=config.min_doc_links)
    alpha = config.resolved_alpha()
    model = train(pruned, vocabulary, config.n_topics, alpha=alpha,
                  beta=config.beta, iterations=config.lda_iterations,
                  seed=config.lda_seed)
    save_topic_model(model, out_p)
    params = {"n_topics": config.n_topics, "alpha": alpha,
              "beta": config.beta, "iterations": config.lda_iterations,
              "min_df": config.min_df, "min_doc_links": config.min_doc_links}
    write_manifest("train-lda", {"bags": bags_p}, {"topic_model": out_p},
                   params, config.lda_seed, out_p.parent)
    return {"documents": len(pruned), "vocabulary": len(vocabulary),
            "outputs": {"topic_model": str(out_p)}}


def stage_infer(topic_model: str, bags: str, out: str,
                config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    model_p = _require(topic_model, "train-lda")
    bags_p = _require(bags, "densify")
    out_p = Path(out)
    model = load_topic_model(model_p)
    rows = []
    for bag in read_bags(bags_p):
        theta = infer(model, bag, iterations=config.infer_iterations,
                      burn_in=config.burn_in, seed=config.lda_seed)
        rows.append((bag.concept, bag.lang, theta))
    n = write_topic_vectors(rows, out_p)
    params = {"iterations": config.infer_iterations,
              "burn_in": config.burn_in}
    write_manifest("infer", {"topic_model": model_p, "bags": bags_p},
                   {"vectors": out_p}, params, config.lda_seed, out_p.parent)
    return {"documents": n, "outputs": {"vectors": str(out_p)}}


def stage_eval_disambig(adjacency: str, dictionary: str, out: str,
                        config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    adjacency_p = _require(adjacency, "build-adjacency")
    dictionary_p = _require(dictionary, "build-anchors")
    out_p = Path(out)
    A = load_adjacency(adjacency_p)
    dict_ = load_dictionary(dictionary_p)
    rank = min(config.rank, len(A.index))
    report = eval_disambiguation(A, dict_,
                                 mask_fraction=config.mask_fraction,
                                 rank=rank,
                                 regularization=config.als_lambda,
                                 iterations=config.als_iterations,
                                 seed=config.als_seed)
    out_p.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2)
                     + "\n")
    tsv_p = out_p.with_suffix(".tsv")
    tsv_p.write_text(report.to_tsv())
    params = {"mask_fraction": config.mask_fraction, "rank": rank,
              "lambda": config.als_lambda,
              "iterations": config.als_iterations}
    write_manifest("eval-disambig",
                   {"adjacency": adjacency_p, "dictionary": dictionary_p},
                   {"report": out_p, "report_tsv": tsv_p},
                   params, config.als_seed, out_p.parent)
    return {"report": report.to_dict(),
            "outputs": {"report": str(out_p), "report_tsv": str(tsv_p)}}


def stage_intruders(topic_model: str, out_tasks: str, out_answers: str,
                    n_topics: int, config: PipelineConfig | None = None
                    ) -> dict:
    config = config or PipelineConfig()
    model_p = _require(topic_model, "train-lda")
    tasks_p = Path(out_tasks)
    answers_p = Path(out_answers)
    model = load_topic_model(model_p)
    tasks = generate_intruders(model, n_topics, seed=config.lda_seed,
                               members_n=config.intruder_members)
    # tasks file can go to annotators; answers stay separate
    tasks_p.write_text(json.dumps(
        [t.to_dict(with_answer=False) for t in tasks],
        sort_keys=True, indent=2) + "\n")
    answers_p.write_text(json.dumps(
        [t.to_dict(with_answer=True) for t in tasks],
        sort_keys=True, indent=2) + "\n")
    write_manifest("intruders", {"topic_model": model_p},
                   {"tasks": tasks_p, "answers": answers_p},
                   {"n_topics": n_topics,
                    "members": config.intruder_members},
                   config.lda_seed, tasks_p.parent)
    return {"tasks": len(tasks),
            "outputs": {"tasks": str(tasks_p), "answers": str(answers_p)}}


def _vectors_by_lang(path: Path) -> dict[str, list[list[float]]]:
    by_lang: dict[str, list[list[float]]] = {}
    for row in read_topic_vectors(path):
        by_lang.setdefault(row["lang"], []).append(row["theta"])
    return by_lang


def stage_lang_bias(vectors: str, out: str, sample_per_lang: int,
                    config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    vectors_p = _require(vectors, "infer")
    out_p = Path(out)
    by_lang = {lang: np.asarray(v) for lang, v in
               _vectors_by_lang(vectors_p).items()}
    report = language_bias(by_lang, sample_per_lang, seed=config.lda_seed)
    out_p.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    write_manifest("lang-bias", {"vectors": vectors_p}, {"report": out_p},
                   {"sample_per_lang": sample_per_lang}, config.lda_seed,
                   out_p.parent)
    return {"languages": sorted(report),
            "auc": {lang: r["auc"] for lang, r in report.items()},
            "outputs": {"report": str(out_p)}}


def stage_distances(vectors: str, out: str, mode: str = "all",
                    config: PipelineConfig | None = None) -> dict:
    vectors_p = _require(vectors, "infer")
    out_p = Path(out)
    if mode == "all":
        by_lang = {lang: np.asarray(v) for lang, v in
                   _vectors_by_lang(vectors_p).items()}
    else:
        by_lang = {}
        for row in read_topic_vectors(vectors_p):
            by_lang.setdefault(row["lang"], {})[row["qid"]] = row["theta"]
    langs, matrix, leaf_order = language_distances(by_lang, mode=mode)
    out_p.write_text(distances_to_tsv(langs, matrix))
    order_p = out_p.with_suffix(".order.json")
    order_p.write_text(json.dumps(leaf_order) + "\n")
    write_manifest("distances", {"vectors": vectors_p},
                   {"matrix": out_p, "leaf_order": order_p},
                   {"mode": mode}, None, out_p.parent)
    return {"languages": langs, "leaf_order": leaf_order,
            "outputs": {"matrix": str(out_p), "leaf_order": str(order_p)}}


def _load_labeled(vectors_path: Path, labels_path: Path
                  ) -> tuple[np.ndarray, list[set]]:
    labels_by_qid: dict[str, list[str]] = {}
    with open(labels_path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                labels_by_qid[row["qid"]] = row["labels"]
    vectors = []
    labels = []
    for row in read_topic_vectors(vectors_path):
        if row["qid"] in labels_by_qid:
            vectors.append(row["theta"])
            labels.append(set(labels_by_qid[row["qid"]]))
    if not vectors:
        raise PipelineError("no labeled vectors after joining on qid")
    return np.asarray(vectors), labels


def stage_classify(train_vectors: str, train_labels: str,
                   test_vectors: str, test_labels: str, out: str,
                   config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig()
    train_v = _require(train_vectors, "infer")
    test_v = _require(test_vectors, "infer")
    train_l = _require(train_labels, "classify")
    test_l = _require(test_labels, "classify")
    out_p = Path(out)
    xs, ys = _load_labeled(train_v, train_l)
    xt, yt = _load_labeled(test_v, test_l)
    report = supervised_topic_eval(xs, ys, xt, yt, seed=config.lda_seed)
    out_p.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    write_manifest("classify",
                   {"train_vectors": train_v, "train_labels": train_l,
                    "test_vectors": test_v, "test_labels": test_l},
                   {"report": out_p}, {}, config.lda_seed, out_p.parent)
    return {"macro_auc": report["macro_auc"],
            "outputs": {"report": str(out_p)}}
