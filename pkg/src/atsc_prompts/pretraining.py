"""Domain-adaptive pretraining data: POS-restricted masking for masked-LM
backends and plain window batching for causal-LM backends.

Masking candidates are adjectives, nouns, and proper nouns. Tags come from
any callable aligned with word_tokenize; a rule-based English tagger ships
as the default so the pipeline runs without an external tagging model.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backends.base import LOSS_CAUSAL_LM, LOSS_MASKED_LM, TrainingInstance
from .corpus import PretrainSentence

CANDIDATE_TAGS = frozenset({"ADJ", "NOUN", "PROPN"})

DEFAULT_MASK_RATE = 0.15

_WORD = re.compile(r"\w+(?:'\w+)?|[^\w\s]")


class TaggingError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


def word_tokenize(sentence: str) -> list[Token]:
    """The documented word tokenization tags align to: alphanumeric runs
    (with internal apostrophes) and single punctuation marks."""
    return [Token(m.group(), m.start(), m.end()) for m in _WORD.finditer(sentence)]


_DETERMINERS = frozenset("""the a an this that these those my your his her its our their
some any each every no all both few most other such what which""".split())
_PREPOSITIONS = frozenset("""of in on at by for with about against between into through
during before after above below to from up down out off over under near""".split())
_PRONOUNS = frozenset("""i you he she it we they me him us them mine yours hers ours theirs
myself yourself himself herself itself ourselves themselves who whom something anything
nothing everything someone anyone everyone""".split())
_CONJUNCTIONS = frozenset("""and but or nor so yet because although though while if when
since unless until whereas""".split())
_AUX_VERBS = frozenset("""is am are was were be been being do does did done have has had
having will would shall should can could may might must""".split())
_COMMON_VERBS = frozenset("""go goes went gone get gets got make makes made take takes took
come comes came see sees saw know knew think thinks thought want wants wanted use uses used
find finds found give gives gave tell told work works worked seem seems seemed feel feels
felt try tries tried leave leaves left call called love loves loved hate hates hated like
likes liked recommend recommends recommended order orders ordered buy buys bought eat eats
ate serve serves served arrive arrives arrived run runs ran keep keeps kept crash crashes
crashed wait waited say says said ask asked look looked need needs needed return returned
broke break breaks stopped stop stops died die dies""".split())
_ADVERBS = frozenset("""very really quite too also just never always often sometimes here
there now then again still even only not well soon already almost perhaps maybe however
definitely absolutely extremely highly pretty rather""".split())
_COMMON_ADJECTIVES = frozenset("""good bad ok okay great nice terrible awful excellent poor
decent amazing horrible fast slow big small new old cheap expensive fresh delicious tasty
friendly rude clean dirty quiet loud light heavy thin thick long short high low hot cold
warm cool best worst better worse fine perfect beautiful pretty comfortable reliable sturdy
solid crisp bright dim sharp dull happy sad angry disappointed satisfied impressed bland
crowded empty busy helpful attentive generous tiny huge modern outdated responsive sleek
overpriced affordable""".split())
_ADJ_SUFFIXES = ("ful", "ous", "ive", "able", "ible", "less", "ish")


def heuristic_pos_tags(tokens: Sequence[str]) -> list[str]:
    """Rule-based English tagger over the universal tag names.

    A documented heuristic default, adequate for steering masking toward
    content words; swap in a real tagger via the `tagger` arguments when
    available.
    """
    tags = []
    for i, token in enumerate(tokens):
        lower = token.lower()
        if not any(c.isalnum() for c in token):
            tags.append("PUNCT")
        elif lower.replace(".", "").replace(",", "").isdigit():
            tags.append("NUM")
        elif lower in _DETERMINERS:
            tags.append("DET")
        elif lower in _PREPOSITIONS:
            tags.append("ADP")
        elif lower in _PRONOUNS:
            tags.append("PRON")
        elif lower in _CONJUNCTIONS:
            tags.append("CONJ")
        elif lower in _AUX_VERBS or lower in _COMMON_VERBS:
            tags.append("VERB")
        elif lower in _ADVERBS:
            tags.append("ADV")
        elif lower in _COMMON_ADJECTIVES or (len(lower) > 4 and lower.endswith(_ADJ_SUFFIXES)):
            tags.append("ADJ")
        elif token[0].isupper() and i > 0:
            tags.append("PROPN")
        elif len(lower) > 3 and lower.endswith("ly"):
            tags.append("ADV")
        elif len(lower) > 4 and lower.endswith(("ed", "ing")):
            tags.append("VERB")
        else:
            tags.append("NOUN")
    return tags


def select_candidates(
    sentence: str,
    pos_tags: Sequence[str],
    tokens: Sequence[Token] | None = None,
) -> list[int]:
    """Positions (into the word tokenization) tagged adjective, noun, or
    proper noun. Tags must align one-to-one with the tokens; masking a
    position later masks the whole word's character span, so multi-piece
    sub-word expansions stay grouped."""
    tokens = list(tokens) if tokens is not None else word_tokenize(sentence)
    if len(pos_tags) != len(tokens):
        offending = tokens[min(len(pos_tags), len(tokens) - 1)] if tokens else None
        where = f" near {offending.text!r} [{offending.start}:{offending.end}]" if offending else ""
        raise TaggingError(
            f"{len(pos_tags)} tags for {len(tokens)} tokens{where} in {sentence[:60]!r}"
        )
    return [i for i, tag in enumerate(pos_tags) if tag in CANDIDATE_TAGS]


@dataclass(frozen=True)
class MaskingPlan:
    tokens: tuple[str, ...]
    candidate_positions: tuple[int, ...]
    masked_positions: tuple[int, ...]
    mask_rate: float

    def __post_init__(self):
        if not set(self.masked_positions) <= set(self.candidate_positions):
            extra = set(self.masked_positions) - set(self.candidate_positions)
            raise ValueError(f"masked positions outside the candidate set: {sorted(extra)}")


def apply_masking(
    tokens: Sequence[str],
    candidate_positions: Sequence[int],
    mask_rate: float = DEFAULT_MASK_RATE,
    seed: int = 0,
) -> MaskingPlan:
    """Choose floor(mask_rate * candidates) positions (at least 1 when any
    candidate exists) uniformly from the candidate set, deterministically
    per seed. Masked positions always become the mask token; no
    mask/random/keep corruption mix is applied."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must lie in [0,1], got {mask_rate}")
    candidates = tuple(candidate_positions)
    if any(not 0 <= c < len(tokens) for c in candidates):
        raise ValueError("candidate position out of range")
    if candidates:
        count = max(1, math.floor(mask_rate * len(candidates)))
        order = np.random.RandomState(seed).permutation(len(candidates))
        masked = tuple(sorted(candidates[i] for i in order[:count]))
    else:
        masked = ()
    return MaskingPlan(
        tokens=tuple(tokens),
        candidate_positions=candidates,
        masked_positions=masked,
        mask_rate=mask_rate,
    )


def build_mlm_instances(
    sentences: Sequence[PretrainSentence | str],
    mask_rate: float = DEFAULT_MASK_RATE,
    seed: int = 0,
    tagger: Callable[[Sequence[str]], Sequence[str]] = heuristic_pos_tags,
) -> list[TrainingInstance]:
    """One masked-LM training instance per sentence.

    masked_spans carry the character spans of masked words; backends remap
    them onto their own sub-word units (whole-word masking falls out of
    span overlap). Sentences with no candidates are emitted with no spans
    and skipped for loss. Sentence i uses seed + i.
    """
    instances = []
    for i, sentence in enumerate(sentences):
        text = sentence.text if isinstance(sentence, PretrainSentence) else sentence
        tokens = word_tokenize(text)
        tags = tagger([t.text for t in tokens])
        candidates = select_candidates(text, tags, tokens=tokens)
        plan = apply_masking([t.text for t in tokens], candidates, mask_rate, seed=seed + i)
        spans = tuple((tokens[p].start, tokens[p].end) for p in plan.masked_positions)
        instances.append(TrainingInstance(loss_kind=LOSS_MASKED_LM, text=text, masked_spans=spans))
    return instances


def clm_batches(
    sentences: Sequence[PretrainSentence | str],
    window: int,
    seed: int = 0,
) -> list[TrainingInstance]:
    """Pack sentences into contiguous word windows for causal-LM training.

    Packing preserves every word; the final window may be shorter and is
    padded by the backend at token level. Window order is shuffled
    deterministically per seed.
    """
    if window < 2:
        raise ValueError(f"window must be at least 2, got {window}")
    words = []
    for sentence in sentences:
        text = sentence.text if isinstance(sentence, PretrainSentence) else sentence
        words.extend(text.split())
    windows = [words[i:i + window] for i in range(0, len(words), window)]
    order = np.random.RandomState(seed).permutation(len(windows))
    return [TrainingInstance(loss_kind=LOSS_CAUSAL_LM, text=" ".join(windows[i]))
            for i in order]
