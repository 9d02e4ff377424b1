"""Corpus ingestion: wiki markup link extraction, redirect resolution and
concept mapping.

The canonical on-disk corpus format is newline-delimited JSON, one article per
line:

    {"qid": "Q1", "lang": "en", "title": "...", "ns": 0, "text": "...",
     "links": [{"anchor": "...", "target_qid": "Q44", "start": 3, "end": 7}]}

Link spans index the article ``text`` field directly (half-open character
offsets), so ``text[start:end] == anchor`` always holds.  For raw wiki markup
the span convention is the position of the anchor text inside the markup
(i.e. inside the ``[[...]]`` construct); this is stable across releases.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

CONCEPT_ID_RE = re.compile(r"^Q[0-9]+$")


class CorpusError(Exception):
    """Unreadable source or schema violation; message carries the position."""


class RedirectCycleError(Exception):
    """Redirect resolution entered a cycle."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("redirect cycle: " + " -> ".join(cycle + [cycle[0]]))


def is_concept_id(value: str) -> bool:
    return bool(CONCEPT_ID_RE.match(value))


@dataclass(frozen=True)
class ExtractedLink:
    anchor: str
    target: str  # ConceptId once resolved; raw title during extraction
    start: int
    end: int


@dataclass
class Article:
    concept: str
    lang: str
    title: str
    text: str
    links: list[ExtractedLink] = field(default_factory=list)
    ns: int = 0

    def validate(self) -> None:
        if not self.lang or self.lang != self.lang.lower():
            raise CorpusError(f"bad lang {self.lang!r} for {self.title!r}")
        prev_end = -1
        for link in sorted(self.links, key=lambda l: l.start):
            if not (0 <= link.start <= link.end <= len(self.text)):
                raise CorpusError(f"link span out of range in {self.title!r}")
            if link.start < prev_end:
                raise CorpusError(f"overlapping link spans in {self.title!r}")
            if self.text[link.start:link.end] != link.anchor:
                raise CorpusError(f"anchor/span mismatch in {self.title!r}")
            prev_end = link.end


@dataclass
class Diagnostics:
    """Counters for records/links dropped along the way."""

    counts: Counter = field(default_factory=Counter)

    def bump(self, key: str, n: int = 1) -> None:
        self.counts[key] += n


# --- wiki markup -----------------------------------------------------------

_COMMENT_RE = re.compile(r"<!--.*?(?:-->|$)", re.DOTALL)
_NOWIKI_RE = re.compile(r"<nowiki>.*?(?:</nowiki>|$)", re.DOTALL | re.IGNORECASE)


def _masked_regions(text: str) -> list[tuple[int, int]]:
    """Regions whose links must be ignored: comments, nowiki, templates."""
    regions = [m.span() for m in _COMMENT_RE.finditer(text)]
    regions += [m.span() for m in _NOWIKI_RE.finditer(text)]
    # templates, with nesting; an unterminated template masks to end of text
    stack: list[int] = []
    i = 0
    while i < len(text) - 1:
        pair = text[i : i + 2]
        if pair == "{{":
            stack.append(i)
            i += 2
        elif pair == "}}" and stack:
            start = stack.pop()
            if not stack:
                regions.append((start, i + 2))
            i += 2
        else:
            i += 1
    if stack:
        regions.append((stack[0], len(text)))
    return regions


def parse_wikitext_links(text: str) -> list[tuple[str, str, tuple[int, int]]]:
    """Extract internal links ``[[Target]]`` / ``[[Target|anchor]]``.

    Returns (anchor, target_title, (start, end)) triples where the span covers
    the anchor text inside the markup.  Malformed constructs and links inside
    comments, nowiki regions or (nested) templates are skipped; parsing never
    raises on arbitrary input.
    """
    masked = _masked_regions(text)

    def in_masked(pos: int) -> bool:
        return any(a <= pos < b for a, b in masked)

    out = []
    i = 0
    n = len(text)
    while True:
        open_pos = text.find("[[", i)
        if open_pos == -1:
            break
        close_pos = text.find("]]", open_pos + 2)
        inner_open = text.find("[[", open_pos + 2)
        if close_pos == -1:
            break
        if inner_open != -1 and inner_open < close_pos:
            # malformed nesting; retry from the inner opener
            i = inner_open
            continue
        if in_masked(open_pos):
            i = close_pos + 2
            continue
        body = text[open_pos + 2 : close_pos]
        if "\n" in body or not body.strip():
            i = close_pos + 2
            continue
        pipe = body.find("|")
        if pipe == -1:
            target = body
            anchor = body
            span = (open_pos + 2, close_pos)
        else:
            target = body[:pipe]
            anchor = body[pipe + 1 :]
            span = (open_pos + 2 + pipe + 1, close_pos)
        target = target.strip()
        if target and anchor:
            out.append((anchor, target, span))
        i = close_pos + 2
    return out


# --- redirects and sitelinks ----------------------------------------------

def resolve_redirect(title: str, redirects: Mapping[str, str]) -> str:
    """Follow redirect entries until a non-redirect title is reached."""
    seen: list[str] = []
    seen_set: set[str] = set()
    current = title
    while current in redirects:
        if current in seen_set:
            cycle = seen[seen.index(current):]
            raise RedirectCycleError(cycle)
        seen.append(current)
        seen_set.add(current)
        current = redirects[current]
    return current


def map_to_concept(lang: str, title: str,
                   sitelinks: Mapping[tuple[str, str], str]) -> str | None:
    return sitelinks.get((lang, title))


def load_redirects(path: str | Path) -> dict[str, dict[str, str]]:
    """TSV ``lang<TAB>from<TAB>to`` per line; ``#`` starts a comment."""
    out: dict[str, dict[str, str]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            lang, src, dst = parts
            out.setdefault(lang, {})[src] = dst
    return out


def load_sitelinks(path: str | Path) -> dict[tuple[str, str], str]:
    """TSV ``lang<TAB>title<TAB>qid`` per line; ``#`` starts a comment."""
    out: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            lang, title, qid = parts
            if not is_concept_id(qid):
                raise CorpusError(f"{path}:{lineno}: bad concept id {qid!r}")
            if (lang, title) in out and out[(lang, title)] != qid:
                raise CorpusError(f"{path}:{lineno}: conflicting mapping for "
                                  f"({lang}, {title})")
            out[(lang, title)] = qid
    return out


# --- canonical stream ------------------------------------------------------

def article_to_record(article: Article) -> dict:
    return {
        "qid": article.concept,
        "lang": article.lang,
        "title": article.title,
        "ns": article.ns,
        "text": article.text,
        "links": [
            {"anchor": l.anchor, "target_qid": l.target,
             "start": l.start, "end": l.end}
            for l in article.links
        ],
    }


def record_to_article(record: dict, position: str = "?") -> Article:
    try:
        links = [
            ExtractedLink(anchor=l["anchor"], target=l["target_qid"],
                          start=l["start"], end=l["end"])
            for l in record["links"]
        ]
        article = Article(
            concept=record["qid"], lang=record["lang"], title=record["title"],
            text=record["text"], links=links, ns=record.get("ns", 0),
        )
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{position}: malformed record ({exc})") from exc
    article.validate()
    return article


def read_corpus(path: str | Path,
                diagnostics: Diagnostics | None = None) -> Iterator[Article]:
    """Stream canonical-format articles; non-main-namespace records dropped."""
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            article = record_to_article(record, position=f"{path}:{lineno}")
            if article.ns != 0:
                diagnostics.bump("dropped_non_main_namespace")
                continue
            yield article


def write_corpus(articles: Iterable[Article], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for article in articles:
            f.write(json.dumps(article_to_record(article), ensure_ascii=False,
                               sort_keys=True))
            f.write("\n")
            count += 1
    return count


# --- ingestion -------------------------------------------------------------

def _resolve_links(article_title: str, lang: str, text: str,
                   raw_links: list[tuple[str, str, tuple[int, int]]],
                   redirects: Mapping[str, str],
                   sitelinks: Mapping[tuple[str, str], str],
                   diagnostics: Diagnostics) -> list[ExtractedLink]:
    links = []
    prev_end = -1
    for anchor, target_title, (start, end) in raw_links:
        if start < prev_end:
            diagnostics.bump("dropped_overlapping_link")
            continue
        try:
            resolved = resolve_redirect(target_title, redirects)
        except RedirectCycleError:
            diagnostics.bump("dropped_redirect_cycle")
            continue
        qid = map_to_concept(lang, resolved, sitelinks)
        if qid is None:
            diagnostics.bump("dropped_unmapped_target")
            continue
        links.append(ExtractedLink(anchor=anchor, target=qid, start=start, end=end))
        prev_end = end
    return links


def ingest_wikitext_records(
    records: Iterable[dict],
    redirects: dict[str, dict[str, str]],
    sitelinks: Mapping[tuple[str, str], str],
    diagnostics: Diagnostics | None = None,
) -> Iterator[Article]:
    """Turn raw-markup records (qid?, lang, title, ns, text) into Articles.

    Per-record work is pure given the two lookup maps, so callers may shard
    the record stream; output order follows input order.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    for record in records:
        ns = record.get("ns", 0)
        if ns != 0:
            diagnostics.bump("dropped_non_main_namespace")
            continue
        lang = record["lang"]
        title = record["title"]
        text = record.get("text", "")
        lang_redirects = redirects.get(lang, {})
        qid = record.get("qid")
        if qid is None:
            try:
                resolved_title = resolve_redirect(title, lang_redirects)
            except RedirectCycleError:
                diagnostics.bump("dropped_redirect_cycle")
                continue
            qid = map_to_concept(lang, resolved_title, sitelinks)
        if qid is None:
            diagnostics.bump("dropped_unmapped_article")
            continue
        raw_links = parse_wikitext_links(text)
        links = _resolve_links(title, lang, text, raw_links,
                               lang_redirects, sitelinks, diagnostics)
        yield Article(concept=qid, lang=lang, title=title, text=text,
                      links=links, ns=0)


def read_xml_dump(path: str | Path, lang: str) -> Iterator[dict]:
    """Read ``<page><ns><title><revision><text>`` records from a MediaWiki
    XML dump (namespaced or not)."""

    def local(tag: str) -> str:
        return tag.rsplit("}", 1)[-1]

    try:
        for _event, elem in ET.iterparse(str(path), events=("end",)):
            if local(elem.tag) != "page":
                continue
            title = None
            ns = 0
            text = ""
            for child in elem.iter():
                name = local(child.tag)
                if name == "title":
                    title = child.text or ""
                elif name == "ns":
                    ns = int(child.text or 0)
                elif name == "text":
                    text = child.text or ""
            if title is None:
                raise CorpusError(f"{path}: <page> without <title>")
            yield {"lang": lang, "title": title, "ns": ns, "text": text}
            elem.clear()
    except ET.ParseError as exc:
        raise CorpusError(f"{path}: XML parse error ({exc})") from exc


def ingest(source: str | Path,
           redirects: dict[str, dict[str, str]],
           sitelinks: Mapping[tuple[str, str], str],
           lang: str | None = None,
           diagnostics: Diagnostics | None = None) -> Iterator[Article]:
    """Ingest either a canonical-format corpus or a MediaWiki XML dump.

    XML sources need ``lang`` since the dump does not carry a language code.
    """
    source = Path(source)
    if source.suffix == ".xml":
        if lang is None:
            raise CorpusError("XML dump ingestion requires a language code")
        records = read_xml_dump(source, lang)
        yield from ingest_wikitext_records(records, redirects, sitelinks,
                                           diagnostics=diagnostics)
    else:
        yield from read_corpus(source, diagnostics=diagnostics)
