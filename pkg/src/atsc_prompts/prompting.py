"""Aspect-dependent prompt rendering and the label-word verbalizer.

Three patterns ship with the package; extra ones can be registered from
config as long as they carry exactly one {aspect} placeholder and one
mask slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .corpus import POLARITIES

MASK_SLOT = "[MASK]"
ASPECT_SLOT = "{aspect}"


class PromptError(ValueError):
    """Raised for invalid templates or unrenderable inputs."""


def _validate_pattern(pattern: str) -> None:
    if pattern.count(ASPECT_SLOT) != 1:
        raise PromptError(f"pattern must contain {ASPECT_SLOT} exactly once: {pattern!r}")
    if pattern.count(MASK_SLOT) != 1:
        raise PromptError(f"pattern must contain {MASK_SLOT} exactly once: {pattern!r}")


@dataclass(frozen=True)
class PromptTemplate:
    """A pattern with one {aspect} placeholder and one mask slot.

    plural_pattern is the agreement-adjusted variant used when the
    substituted phrase is plural (e.g. the "things" ablation).
    """

    id: str
    pattern: str
    plural_pattern: str | None = None

    def __post_init__(self):
        _validate_pattern(self.pattern)
        if self.plural_pattern is not None:
            _validate_pattern(self.plural_pattern)

    def pattern_for(self, plural: bool) -> str:
        if plural and self.plural_pattern is not None:
            return self.plural_pattern
        return self.pattern


BUILTIN_TEMPLATES: Mapping[str, PromptTemplate] = MappingProxyType({
    "felt_was": PromptTemplate(
        "felt_was",
        "I felt the {aspect} was [MASK].",
        "I felt the {aspect} were [MASK].",
    ),
    "made_me_feel": PromptTemplate(
        "made_me_feel",
        "The {aspect} made me feel [MASK].",
        "The {aspect} made me feel [MASK].",
    ),
    "is": PromptTemplate(
        "is",
        "The {aspect} is [MASK].",
        "The {aspect} are [MASK].",
    ),
})

TEMPLATE_IDS = tuple(BUILTIN_TEMPLATES)


def load_templates(entries: list[Mapping] | None = None) -> dict[str, PromptTemplate]:
    """Built-in templates plus any config-registered extras, all validated."""
    templates = dict(BUILTIN_TEMPLATES)
    for entry in entries or []:
        template = PromptTemplate(
            id=entry["id"],
            pattern=entry["pattern"],
            plural_pattern=entry.get("plural_pattern"),
        )
        templates[template.id] = template
    return templates


def get_template(template_id: str, extra: Mapping[str, PromptTemplate] | None = None) -> PromptTemplate:
    if extra and template_id in extra:
        return extra[template_id]
    if template_id in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[template_id]
    raise PromptError(f"unknown template {template_id!r} (built-ins: {', '.join(TEMPLATE_IDS)})")


@dataclass(frozen=True)
class Verbalizer:
    """Bijection between polarities and the label words a backend scores."""

    word_for: Mapping[str, str]

    def __post_init__(self):
        if set(self.word_for) != set(POLARITIES):
            raise PromptError(f"verbalizer must map exactly {POLARITIES}")
        if len(set(self.word_for.values())) != len(POLARITIES):
            raise PromptError("label words must be distinct")
        object.__setattr__(self, "word_for", MappingProxyType(dict(self.word_for)))

    def verbalize(self, polarity: str) -> str:
        try:
            return self.word_for[polarity]
        except KeyError:
            raise PromptError(f"unknown polarity {polarity!r}") from None

    def unverbalize(self, label_word: str) -> str:
        for polarity, word in self.word_for.items():
            if word == label_word:
                return polarity
        raise PromptError(f"unknown label word {label_word!r}")

    @property
    def label_words(self) -> tuple[str, ...]:
        return tuple(self.word_for[p] for p in POLARITIES)


DEFAULT_VERBALIZER = Verbalizer({"positive": "good", "neutral": "ok", "negative": "bad"})


@dataclass(frozen=True)
class RenderedPrompt:
    full_text: str
    mask_position: int
    mode: str  # "cloze" | "next_word"
    suffix: str = ""


@dataclass(frozen=True)
class HypothesisPair:
    positive_hypothesis: str
    negative_hypothesis: str


def _substitute(pattern: str, aspect: str, mask_token: str) -> tuple[str, int]:
    """Fill the aspect slot verbatim and return (text, mask offset)."""
    if not aspect or not aspect.strip():
        raise PromptError("aspect must be non-empty")
    if MASK_SLOT in aspect or (mask_token != MASK_SLOT and mask_token in aspect):
        raise PromptError(f"aspect may not contain the mask token: {aspect!r}")
    before, after = pattern.split(ASPECT_SLOT)
    text = before + aspect + after
    position = text.index(MASK_SLOT)
    text = text[:position] + mask_token + text[position + len(MASK_SLOT):]
    return text, position


def render_cloze(
    template: PromptTemplate,
    aspect: str,
    review: str,
    mask_token: str = MASK_SLOT,
) -> RenderedPrompt:
    """Append the filled pattern to the review, keeping the mask slot.

    The aspect is substituted verbatim (original casing, no grammatical
    agreement) and the prompt is joined with a single space.
    """
    prompt, offset = _substitute(template.pattern, aspect, mask_token)
    prefix = f"{review} " if review else ""
    return RenderedPrompt(
        full_text=prefix + prompt,
        mask_position=len(prefix) + offset,
        mode="cloze",
    )


def render_next_word(
    template: PromptTemplate,
    aspect: str,
    review: str,
) -> RenderedPrompt:
    """Like render_cloze but truncated at the mask slot for next-word scoring.

    Whatever followed the slot (usually ".") is recorded as the suffix so
    training can optionally score it after the label word.
    """
    prompt, offset = _substitute(template.pattern, aspect, MASK_SLOT)
    head = prompt[:offset].rstrip()
    suffix = prompt[offset + len(MASK_SLOT):]
    prefix = f"{review} " if review else ""
    full_text = prefix + head
    return RenderedPrompt(
        full_text=full_text,
        mask_position=len(full_text),
        mode="next_word",
        suffix=suffix,
    )


def render_hypotheses(
    template: PromptTemplate,
    aspect: str,
    verbalizer: Verbalizer = DEFAULT_VERBALIZER,
    plural: bool = False,
) -> HypothesisPair:
    """Build the positive/negative hypothesis pair for NLI scoring.

    The review is not included (it is the premise); the neutral label word
    never appears in a hypothesis.
    """
    pattern = template.pattern_for(plural)
    positive, _ = _substitute(pattern, aspect, verbalizer.verbalize("positive"))
    negative, _ = _substitute(pattern, aspect, verbalizer.verbalize("negative"))
    return HypothesisPair(positive_hypothesis=positive, negative_hypothesis=negative)
