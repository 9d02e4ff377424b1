"""Shared synthetic corpus builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from linktopics.corpus import Article, ExtractedLink
from linktopics.densify import BagOfLinks


def make_linked_article(concept: str, lang: str, targets: list[str],
                        name_of, mentions: int = 3,
                        title: str | None = None) -> Article:
    """Article whose text mentions each target `mentions` times but links
    only the first mention (plain-text record in the canonical format)."""
    words: list[tuple[str, str | None]] = []  # (word, linked target or None)
    for target in targets:
        name = name_of(target)
        words.append((name, target))
        for _ in range(mentions - 1):
            words.append((name, None))
    text_parts: list[str] = []
    links: list[ExtractedLink] = []
    pos = 0
    for word, target in words:
        if text_parts:
            pos += 1  # separating space
        start = pos
        end = start + len(word)
        if target is not None:
            links.append(ExtractedLink(anchor=word, target=target,
                                       start=start, end=end))
        text_parts.append(word)
        pos = end
    article = Article(concept=concept, lang=lang,
                     title=title or concept, text=" ".join(text_parts),
                     links=links)
    article.validate()
    return article


def unique_names(lang: str = ""):
    """Unambiguous surface form per concept: Q17 -> '<lang>w17'."""
    def name_of(qid: str) -> str:
        return f"{lang}w{qid[1:]}"
    return name_of


def make_toy_corpus(n_articles: int = 50, links_per_article: int = 5,
                    lang: str = "aa", mentions: int = 3, seed: int = 0,
                    qid_offset: int = 0) -> list[Article]:
    """Ring-structured corpus with unambiguous anchors."""
    rng = np.random.default_rng(seed)
    qids = [f"Q{qid_offset + i + 1}" for i in range(n_articles)]
    name_of = unique_names(lang)
    articles = []
    for i, qid in enumerate(qids):
        choices = [q for q in qids if q != qid]
        targets = list(rng.choice(choices, size=links_per_article,
                                  replace=False))
        articles.append(make_linked_article(qid, lang, targets, name_of,
                                            mentions=mentions))
    return articles


def make_partition_corpus(community_size: int = 100,
                          links_per_article: int = 10,
                          lang: str = "aa", seed: int = 0
                          ) -> list[Article]:
    """Two link communities whose anchors are ambiguous across them.

    Concept Q(k+1) lives in community 0 and Q(k+1+size) in community 1;
    both share the surface form 'amb<k>', so every anchor has exactly two
    candidates, one per community.
    """
    rng = np.random.default_rng(seed)
    size = community_size
    communities = [[f"Q{i + 1}" for i in range(size)],
                   [f"Q{i + 1 + size}" for i in range(size)]]

    def name_of(qid: str) -> str:
        return f"amb{(int(qid[1:]) - 1) % size}"

    articles = []
    for community in communities:
        for qid in community:
            choices = [q for q in community if q != qid]
            targets = list(rng.choice(choices, size=links_per_article,
                                      replace=False))
            articles.append(make_linked_article(qid, lang, targets, name_of,
                                                mentions=1))
    return articles


def make_lda_corpus(n_docs: int = 300, support_size: int = 25,
                    doc_len: int = 40, seed: int = 0
                    ) -> tuple[list[BagOfLinks], list[int]]:
    """Documents drawn from two concept-disjoint generators."""
    rng = np.random.default_rng(seed)
    supports = [[f"Q{i + 1}" for i in range(support_size)],
                [f"Q{i + 1 + support_size}" for i in range(support_size)]]
    bags = []
    generators = []
    for d in range(n_docs):
        g = int(rng.integers(0, 2))
        weights = rng.dirichlet(np.ones(support_size))
        bag = BagOfLinks(concept=f"Q{10000 + d}", lang="xx")
        for qid in rng.choice(supports[g], size=doc_len, p=weights):
            bag.counts[qid] += 1
        bags.append(bag)
        generators.append(g)
    return bags, generators


@pytest.fixture
def toy_corpus():
    return make_toy_corpus()


def write_raw_language(workdir, lang, n_articles=30, links_per_article=5,
                       mentions=3, seed=0):
    """Raw wiki-markup XML dump plus redirect/sitelink maps for one language.

    Returns (source, redirects, sitelinks) paths.  Every concept has one
    unambiguous surface form; each article links each target once and
    mentions it `mentions` times in total.
    """
    rng = np.random.default_rng(seed)
    qids = [f"Q{i + 1}" for i in range(n_articles)]
    name_of = unique_names(lang)
    source = workdir / f"raw_{lang}.xml"
    with open(source, "w", encoding="utf-8") as f:
        f.write("<mediawiki>\n")
        for i, qid in enumerate(qids):
            choices = [q for q in qids if q != qid]
            targets = list(rng.choice(choices, size=links_per_article,
                                      replace=False))
            parts = []
            for target in targets:
                name = name_of(target)
                parts.append(f"[[{name}]]")
                parts.extend([name] * (mentions - 1))
            f.write(f"<page><title>{name_of(qid)}</title><ns>0</ns>"
                    f"<revision><text>{' '.join(parts)}</text></revision>"
                    f"</page>\n")
        f.write("</mediawiki>\n")
    redirects = workdir / f"redirects_{lang}.tsv"
    redirects.write_text("# no redirects\n")
    sitelinks = workdir / f"sitelinks_{lang}.tsv"
    sitelinks.write_text("".join(f"{lang}\t{name_of(q)}\t{q}\n" for q in qids))
    return source, redirects, sitelinks


def run_full_pipeline(workdir, langs=("aa", "bb"), n_articles=30,
                      lda_iterations=30, infer_iterations=20, burn_in=10,
                      rank=10, n_topics=2, deterministic=False):
    """Drive every CLI subcommand over a synthetic two-language corpus.

    Returns a dict of produced artifact paths.  Raises AssertionError on any
    non-zero exit code.
    """
    import json

    from linktopics.cli import main

    def run(argv):
        if deterministic:
            argv = ["--deterministic"] + argv
        code = main(argv)
        assert code == 0, f"exit {code} for: {' '.join(argv)}"

    paths = {}
    common = ["--rank", str(rank), "--iters", "5", "--seed", "0",
              "--min-df", "1", "--min-doc-links", "1",
              "--k", str(n_topics), "--lda-iterations", str(lda_iterations),
              "--infer-iterations", str(infer_iterations),
              "--burn-in", str(burn_in), "--lda-seed", "0"]
    bag_files = []
    for lang in langs:
        source, redirects, sitelinks = write_raw_language(
            workdir, lang, n_articles=n_articles)
        corpus = workdir / f"corpus_{lang}.jsonl"
        run(["ingest", "--source", str(source), "--redirects", str(redirects),
             "--sitelinks", str(sitelinks), "--out", str(corpus),
             "--lang", lang] + common)
        dictionary = workdir / f"anchors_{lang}.jsonl"
        run(["build-anchors", "--corpus", str(corpus), "--lang", lang,
             "--out", str(dictionary)] + common)
        adjacency = workdir / f"adjacency_{lang}.bin"
        run(["build-adjacency", "--corpus", str(corpus), "--lang", lang,
             "--out", str(adjacency)] + common)
        factor_model = workdir / f"factors_{lang}.bin"
        run(["factorize", "--adjacency", str(adjacency),
             "--out", str(factor_model)] + common)
        bags = workdir / f"bags_{lang}.jsonl"
        run(["densify", "--corpus", str(corpus), "--dictionary",
             str(dictionary), "--factor-model", str(factor_model),
             "--lang", lang, "--out", str(bags)] + common)
        bag_files.append(bags)
        paths.update({f"corpus_{lang}": corpus,
                      f"dictionary_{lang}": dictionary,
                      f"adjacency_{lang}": adjacency,
                      f"factor_model_{lang}": factor_model,
                      f"bags_{lang}": bags})

    pooled = workdir / "bags_all.jsonl"
    pooled.write_bytes(b"".join(p.read_bytes() for p in bag_files))
    topic_model = workdir / "topics.bin"
    run(["train-lda", "--bags", str(pooled), "--out", str(topic_model)]
        + common)
    vectors = workdir / "vectors.jsonl"
    run(["infer", "--model", str(topic_model), "--in", str(pooled),
         "--out", str(vectors)] + common)

    disambig = workdir / "disambig.json"
    run(["eval-disambig", "--adjacency", str(paths[f"adjacency_{langs[0]}"]),
         "--dictionary", str(paths[f"dictionary_{langs[0]}"]),
         "--out", str(disambig)] + common)
    tasks = workdir / "intruder_tasks.json"
    answers = workdir / "intruder_answers.json"
    run(["intruders", "--model", str(topic_model), "--out-tasks", str(tasks),
         "--out-answers", str(answers),
         "--n-intruder-topics", str(n_topics)] + common)
    bias = workdir / "lang_bias.json"
    run(["lang-bias", "--vectors", str(vectors), "--out", str(bias),
         "--sample-per-lang", str(n_articles // 2)] + common)
    distances = workdir / "distances.tsv"
    run(["distances", "--vectors", str(vectors), "--out", str(distances),
         "--mode", "all"] + common)

    labels = workdir / "labels.jsonl"
    with open(labels, "w", encoding="utf-8") as f:
        for i in range(n_articles):
            label = "even" if i % 2 == 0 else "odd"
            f.write(json.dumps({"qid": f"Q{i + 1}", "labels": [label]}) + "\n")
    classify = workdir / "classify.json"
    run(["classify", "--train-vectors", str(vectors),
         "--train-labels", str(labels), "--test-vectors", str(vectors),
         "--test-labels", str(labels), "--out", str(classify)] + common)

    paths.update({"bags_all": pooled, "topic_model": topic_model,
                  "vectors": vectors, "disambig": disambig,
                  "intruder_tasks": tasks, "intruder_answers": answers,
                  "lang_bias": bias, "distances": distances,
                  "labels": labels, "classify": classify})
    return paths
