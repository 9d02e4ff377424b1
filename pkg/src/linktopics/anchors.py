"""Per-language anchor dictionaries.

For every surface 1..4-gram the dictionary records how often it occurs in
text, how often as an existing link anchor, and which concepts it pointed to.
The link probability (linked / total occurrences) filters out stop-word-like
phrases; phrases with huge candidate sets are filtered at lookup time.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import Article, is_concept_id

DEFAULT_LINK_THRESHOLD = 0.065
DEFAULT_MAX_CANDIDATES = 10
DEFAULT_NGRAM_MAX = 4

# word tokens keep intra-word hyphens/apostrophes; CJK falls back to
# per-character tokens (the alternation order makes CJK chars win over \w)
_TOKEN_RE = re.compile(
    "[\u3040-\u30ff\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff]"
    "|[^\\W_]+(?:['\u2019\\-][^\\W_]+)*"
)

_WS_RE = re.compile(r"\s+")


def normalize_phrase(phrase: str) -> str:
    """Dictionary key normalization: case-fold and collapse whitespace."""
    return _WS_RE.sub(" ", phrase.strip()).casefold()


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Deterministic tokenization into (normalized token, start, end).

    Splits on whitespace and punctuation; punctuation is not a token; spans
    index the original text.
    """
    return [(m.group(0).casefold(), m.start(), m.end())
            for m in _TOKEN_RE.finditer(text)]


class DictionaryError(Exception):
    pass


@dataclass
class AnchorEntry:
    phrase: str
    total_occurrences: int = 0
    link_occurrences: int = 0
    candidates: Counter = field(default_factory=Counter)

    @property
    def link_probability(self) -> float:
        return self.link_occurrences / self.total_occurrences

    def validate(self) -> None:
        if self.link_occurrences < 1:
            raise DictionaryError(f"{self.phrase!r}: no link occurrences")
        if self.total_occurrences < self.link_occurrences:
            raise DictionaryError(f"{self.phrase!r}: total < linked")
        if sum(self.candidates.values()) != self.link_occurrences:
            raise DictionaryError(f"{self.phrase!r}: candidate counts do not "
                                  "sum to link occurrences")
        for qid in self.candidates:
            if not is_concept_id(qid):
                raise DictionaryError(f"{self.phrase!r}: bad candidate {qid!r}")


@dataclass
class AnchorDictionary:
    lang: str
    entries: dict[str, AnchorEntry] = field(default_factory=dict)
    ngram_max: int = DEFAULT_NGRAM_MAX

    def lookup(self, phrase: str) -> AnchorEntry | None:
        return self.entries.get(normalize_phrase(phrase))

    def merge(self, other: "AnchorDictionary") -> None:
        """Merge a partial dictionary built from another shard (counts are
        associative and commutative, so shard order does not matter)."""
        if other.lang != self.lang or other.ngram_max != self.ngram_max:
            raise DictionaryError("cannot merge dictionaries with different "
                                  "lang/ngram settings")
        for phrase, entry in other.entries.items():
            mine = self.entries.setdefault(phrase, AnchorEntry(phrase=phrase))
            mine.total_occurrences += entry.total_occurrences
            mine.link_occurrences += entry.link_occurrences
            mine.candidates.update(entry.candidates)


def eligible(entry: AnchorEntry,
             threshold: float = DEFAULT_LINK_THRESHOLD,
             max_candidates: int = DEFAULT_MAX_CANDIDATES) -> bool:
    """Keep phrases linked often enough and not hopelessly ambiguous.

    The threshold comparison is inclusive: link probability exactly at the
    threshold passes.
    """
    return (entry.link_probability >= threshold
            and len(entry.candidates) <= max_candidates)


def build_dictionary(articles: Iterable[Article], lang: str,
                     ngram_max: int = DEFAULT_NGRAM_MAX) -> AnchorDictionary:
    """Count every 1..ngram_max-gram occurrence and every anchor use.

    Multi-word totals count overlapping occurrences independently per
    starting token.  Phrases never used as an anchor are not stored.
    """
    total_counts: Counter = Counter()
    link_counts: Counter = Counter()
    candidate_counts: dict[str, Counter] = {}

    for article in articles:
        if article.lang != lang:
            raise DictionaryError(
                f"article {article.title!r} has lang {article.lang!r}, "
                f"expected {lang!r}")
        tokens = tokenize(article.text)
        for i in range(len(tokens)):
            for n in range(1, ngram_max + 1):
                if i + n > len(tokens):
                    break
                phrase = " ".join(tok for tok, _s, _e in tokens[i : i + n])
                total_counts[phrase] += 1
        for link in article.links:
            anchor_tokens = tokenize(link.anchor)
            if not (1 <= len(anchor_tokens) <= ngram_max):
                continue
            phrase = " ".join(tok for tok, _s, _e in anchor_tokens)
            link_counts[phrase] += 1
            candidate_counts.setdefault(phrase, Counter())[link.target] += 1

    entries = {}
    for phrase, linked in link_counts.items():
        entry = AnchorEntry(
            phrase=phrase,
            # anchors sit in the text, but guard against tokenization drift
            total_occurrences=max(total_counts.get(phrase, 0), linked),
            link_occurrences=linked,
            candidates=candidate_counts[phrase],
        )
        entry.validate()
        entries[phrase] = entry
    return AnchorDictionary(lang=lang, entries=entries, ngram_max=ngram_max)


# --- serialization ---------------------------------------------------------

def save_dictionary(dictionary: AnchorDictionary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for phrase in sorted(dictionary.entries):
            entry = dictionary.entries[phrase]
            record = {
                "lang": dictionary.lang,
                "phrase": phrase,
                "total": entry.total_occurrences,
                "linked": entry.link_occurrences,
                "candidates": [
                    {"qid": qid, "count": count}
                    for qid, count in sorted(entry.candidates.items())
                ],
                "ngram_max": dictionary.ngram_max,
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_dictionary(path: str | Path) -> AnchorDictionary:
    dictionary: AnchorDictionary | None = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                entry = AnchorEntry(
                    phrase=record["phrase"],
                    total_occurrences=record["total"],
                    link_occurrences=record["linked"],
                    candidates=Counter(
                        {c["qid"]: c["count"] for c in record["candidates"]}),
                )
                lang = record["lang"]
                ngram_max = record.get("ngram_max", DEFAULT_NGRAM_MAX)
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise DictionaryError(f"{path}:{lineno}: {exc}") from exc
            entry.validate()
            if dictionary is None:
                dictionary = AnchorDictionary(lang=lang, ngram_max=ngram_max)
            elif dictionary.lang != lang:
                raise DictionaryError(f"{path}:{lineno}: mixed languages")
            dictionary.entries[entry.phrase] = entry
    if dictionary is None:
        raise DictionaryError(f"{path}: empty dictionary file")
    return dictionary
