"""SemEval-style review ingestion: XML parsing, preprocessing, few-shot
sampling, and pretraining sentence streams."""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DOMAINS = ("laptops", "restaurants")
POLARITIES = ("positive", "negative", "neutral")
RAW_POLARITIES = POLARITIES + ("conflict",)
ASPECT_KINDS = ("term", "category")

# Review-corpus category that feeds each target domain.
CATEGORY_FOR_DOMAIN = {"laptops": "electronics", "restaurants": "restaurants"}

FEW_SHOT_SIZES = (0, 16, 64, 256, 1024, "full")


class ParseError(ValueError):
    """Raised when an input document cannot be parsed into annotations."""


@dataclass(frozen=True)
class AspectAnnotation:
    surface: str
    polarity: str
    span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.polarity not in RAW_POLARITIES:
            raise ParseError(f"unknown polarity {self.polarity!r}")


@dataclass(frozen=True)
class RawAnnotation:
    sentence_id: str
    text: str
    aspects: tuple[AspectAnnotation, ...]
    aspect_kind: str


@dataclass(frozen=True)
class LabeledExample:
    text: str
    aspect: str
    polarity: str
    domain: str
    aspect_kind: str
    source_id: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"labeled example polarity must be one of {POLARITIES}, got {self.polarity!r}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")


@dataclass(frozen=True)
class FewShotSpec:
    """Training-set size for one run: 0, a positive count, or "full"."""

    size: int | str
    seed: int

    def __post_init__(self):
        if self.size != "full" and (not isinstance(self.size, int) or self.size < 0):
            raise ValueError(f"size must be a non-negative int or 'full', got {self.size!r}")


@dataclass(frozen=True)
class PretrainSentence:
    text: str
    domain: str


@dataclass
class StreamStats:
    consumed: int = 0
    skipped: int = 0
    matched: int = 0
    sentences: int = 0


def parse_semeval(xml_document: bytes | str, kind: str) -> list[RawAnnotation]:
    """Parse a SemEval-2014 Task 4 XML document into raw annotations.

    kind="atsc" reads aspectTerm elements (with character spans),
    kind="acsc" reads aspectCategory elements (no spans). All four raw
    polarity labels, including conflict, are preserved; sentence order
    is preserved.
    """
    if kind not in ("atsc", "acsc"):
        raise ValueError(f"kind must be 'atsc' or 'acsc', got {kind!r}")
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML at line {line}, column {col}: {exc}") from exc

    annotations = []
    for sentence in root.iter("sentence"):
        sid = sentence.get("id", "")
        text_el = sentence.find("text")
        text = text_el.text or "" if text_el is not None else ""
        aspects = []
        if kind == "atsc":
            for term in sentence.iter("aspectTerm"):
                surface = term.get("term")
                polarity = term.get("polarity")
                if polarity is None:
                    raise ParseError(f"aspectTerm missing polarity attribute in sentence {sid!r}")
                span = None
                if term.get("from") is not None and term.get("to") is not None:
                    span = (int(term.get("from")), int(term.get("to")))
                    if text[span[0]:span[1]] != surface:
                        log.warning(
                            "span mismatch in sentence %r: text[%d:%d]=%r != term=%r",
                            sid, span[0], span[1], text[span[0]:span[1]], surface,
                        )
                aspects.append(AspectAnnotation(surface=surface or "", polarity=polarity, span=span))
            annotations.append(RawAnnotation(sid, text, tuple(aspects), "term"))
        else:
            for cat in sentence.iter("aspectCategory"):
                surface = cat.get("category")
                polarity = cat.get("polarity")
                if polarity is None:
                    raise ParseError(f"aspectCategory missing polarity attribute in sentence {sid!r}")
                aspects.append(AspectAnnotation(surface=surface or "", polarity=polarity, span=None))
            annotations.append(RawAnnotation(sid, text, tuple(aspects), "category"))
    return annotations


def preprocess(raw: Sequence[RawAnnotation], domain: str) -> list[LabeledExample]:
    """Flatten annotations into one example per (sentence, aspect) pair.

    Conflict-labeled aspects are dropped; sentences left with no aspects
    emit nothing.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    examples = []
    for ann in raw:
        for aspect in ann.aspects:
            if aspect.polarity == "conflict":
                continue
            examples.append(LabeledExample(
                text=ann.text,
                aspect=aspect.surface,
                polarity=aspect.polarity,
                domain=domain,
                aspect_kind=ann.aspect_kind,
                source_id=ann.sentence_id,
            ))
    return examples


def sample_few_shot(examples: Sequence[LabeledExample], spec: FewShotSpec) -> list[LabeledExample]:
    """Draw a deterministic uniform subset without replacement.

    The seed initializes a Mersenne Twister (numpy RandomState, stable
    across releases); the subset is the first `size` indices of a full
    permutation, in permutation order. Sampling is not class-stratified.
    """
    if spec.size == "full":
        return list(examples)
    if spec.size == 0:
        return []
    if spec.size > len(examples):
        raise ValueError(f"requested {spec.size} examples but only {len(examples)} available")
    order = np.random.RandomState(spec.seed).permutation(len(examples))
    return [examples[i] for i in order[:spec.size]]


# Tokens that end with a period without ending a sentence.
_ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "etc", "vs", "inc",
    "ltd", "co", "approx", "dept", "est", "min", "max", "no", "e.g", "i.e",
    "a.m", "p.m", "u.s", "u.k",
})

_SENTENCE_END = re.compile(r"([.!?]+)(\s+)")


def split_sentences(text: str) -> list[str]:
    """Punctuation-based sentence splitter with an abbreviation guard.

    Whitespace inside each sentence is normalized to single spaces; empty
    sentences are dropped.
    """
    breaks = [0]
    for match in _SENTENCE_END.finditer(text):
        end = match.end(1)
        prev = text[breaks[-1]:match.start(1)].split()
        last_word = prev[-1].lower() if prev else ""
        bare = last_word.rstrip(".")
        if bare in _ABBREVIATIONS or (len(bare) == 1 and bare.isalpha()):
            continue
        breaks.append(end)
    breaks.append(len(text))
    sentences = []
    for start, end in zip(breaks, breaks[1:]):
        sent = " ".join(text[start:end].split())
        if sent:
            sentences.append(sent)
    return sentences


def prepare_pretrain_corpus(
    records: Iterable[str | Mapping],
    domain: str,
    limit: int | None = None,
    stats: StreamStats | None = None,
) -> Iterator[PretrainSentence]:
    """Stream domain-matched review sentences out of a raw review corpus.

    `records` is an iterable of JSON lines (or pre-parsed mappings) with at
    least `category` and `text` fields. Only reviews whose category feeds
    `domain` pass (electronics -> laptops, restaurants -> restaurants).
    At most `limit` records are consumed from the stream; unreadable
    records are counted and skipped, never aborting the stream.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    wanted = CATEGORY_FOR_DOMAIN[domain]
    stats = stats if stats is not None else StreamStats()
    iterator = iter(records)
    while limit is None or stats.consumed < limit:
        try:
            record = next(iterator)
        except StopIteration:
            break
        stats.consumed += 1
        try:
            if isinstance(record, str):
                record = json.loads(record)
            category = str(record["category"]).strip().lower()
            text = str(record["text"])
        except (json.JSONDecodeError, KeyError, TypeError):
            stats.skipped += 1
            continue
        if category != wanted:
            continue
        stats.matched += 1
        for sent in split_sentences(text):
            stats.sentences += 1
            yield PretrainSentence(text=sent, domain=domain)


# One JSON object per line; a leading header record carries provenance.
HEADER_KIND = "header"


def write_examples(examples: Iterable[LabeledExample], path: str | Path, fingerprint: str = "") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        if fingerprint:
            f.write(json.dumps({"kind": HEADER_KIND, "fingerprint": fingerprint}) + "\n")
        for ex in examples:
            f.write(json.dumps(asdict(ex), ensure_ascii=False) + "\n")
    tmp.replace(path)


def read_examples(path: str | Path) -> list[LabeledExample]:
    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("kind") == HEADER_KIND:
                continue
            examples.append(LabeledExample(**record))
    return examples


def class_counts(examples: Iterable[LabeledExample]) -> dict[str, int]:
    counts = {polarity: 0 for polarity in POLARITIES}
    for ex in examples:
        counts[ex.polarity] += 1
    return counts
