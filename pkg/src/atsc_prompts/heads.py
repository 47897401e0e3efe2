"""Prediction heads: map backend scores to distributions over the three
polarities, and define each head's training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .backends.base import (
    Backend,
    LOSS_LABEL_WORD,
    LOSS_THREE_WAY,
    NliLogits,
    TrainingInstance,
    resolve_scoring_words,
    softmax,
)
from .corpus import POLARITIES, LabeledExample
from .prompting import (
    DEFAULT_VERBALIZER,
    PromptTemplate,
    Verbalizer,
    render_cloze,
    render_hypotheses,
    render_next_word,
)

# Canonical class order for score vectors and confusion matrices.
POLARITY_ORDER = POLARITIES

HEAD_KINDS = ("lm_cloze", "lm_next_word", "nli", "baseline_cls", "baseline_nsp")
BASELINE_HEADS = ("baseline_cls", "baseline_nsp")

FAMILY_FOR_HEAD = {
    "lm_cloze": "masked_lm",
    "lm_next_word": "causal_lm",
    "nli": "nli",
    "baseline_cls": "pair_classifier",
    "baseline_nsp": "pair_classifier",
}

SCORING_MODES = ("probability_argmax", "logit_softmax")


class HeadError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassDistribution:
    """Normalized probabilities over positive/negative/neutral."""

    positive: float
    negative: float
    neutral: float

    def __post_init__(self):
        values = (self.positive, self.negative, self.neutral)
        if any(not math.isfinite(v) or v < 0 or v > 1 for v in values):
            raise HeadError(f"probabilities must lie in [0,1], got {values}")
        if abs(sum(values) - 1.0) > 1e-6:
            raise HeadError(f"probabilities sum to {sum(values)}, not 1")

    def probability(self, polarity: str) -> float:
        return {"positive": self.positive, "negative": self.negative,
                "neutral": self.neutral}[polarity]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.positive, self.negative, self.neutral)

    def argmax(self) -> str:
        # Fixed tie-break: positive > negative > neutral.
        best, best_p = "positive", self.positive
        for polarity, p in (("negative", self.negative), ("neutral", self.neutral)):
            if p > best_p:
                best, best_p = polarity, p
        return best


def _normalized(scores: Sequence[float]) -> ClassDistribution:
    total = sum(scores)
    if total <= 0:
        raise HeadError("degenerate backend: all class scores are zero")
    return ClassDistribution(*(s / total for s in scores))


def head_requires_template(head: str) -> bool:
    return head not in BASELINE_HEADS


def lm_predict(
    example: LabeledExample,
    template: PromptTemplate,
    verbalizer: Verbalizer,
    backend: Backend,
    mode: str = "cloze",
    aspect_override: str | None = None,
    plural: bool = False,
) -> ClassDistribution:
    """Score the three label words in a rendered prompt and renormalize.

    All other vocabulary items are ignored: the class probability is the
    label word's probability divided by the three label words' total.
    """
    if mode not in ("cloze", "next_word"):
        raise HeadError(f"mode must be 'cloze' or 'next_word', got {mode!r}")
    aspect = aspect_override if aspect_override is not None else example.aspect
    pattern = template.pattern_for(plural)
    working = PromptTemplate(template.id, pattern) if plural else template
    scoring = resolve_scoring_words(backend, verbalizer.label_words)
    if len(set(scoring.values())) != len(scoring):
        raise HeadError(f"label words collapse to the same scoring item: {scoring}")
    if mode == "cloze":
        rendered = render_cloze(working, aspect, example.text, mask_token=backend.mask_token)
        dist = backend.mask_fill(rendered.full_text, candidates=tuple(scoring.values()))
    else:
        rendered = render_next_word(working, aspect, example.text)
        dist = backend.next_token(rendered.full_text, candidates=tuple(scoring.values()))
    probs = [dist.probability(scoring[verbalizer.verbalize(p)]) for p in POLARITY_ORDER]
    return _normalized(probs)


def nli_class_scores(
    positive_logits: NliLogits,
    negative_logits: NliLogits,
    scoring: str,
) -> tuple[float, float, float]:
    """Combine per-hypothesis NLI scores into (positive, negative, neutral).

    Entailment of each hypothesis scores its polarity; the neutral score is
    the mean of the two neutral scores. probability_argmax works on
    per-hypothesis probabilities, logit_softmax on raw logits.
    """
    if scoring == "probability_argmax":
        entail_p, neutral_p, _ = positive_logits.probabilities()
        entail_n, neutral_n, _ = negative_logits.probabilities()
        return (entail_p, entail_n, (neutral_p + neutral_n) / 2)
    if scoring == "logit_softmax":
        return (
            positive_logits.entail,
            negative_logits.entail,
            (positive_logits.neutral + negative_logits.neutral) / 2,
        )
    raise HeadError(f"scoring must be one of {SCORING_MODES}, got {scoring!r}")


def nli_predict(
    example: LabeledExample,
    template: PromptTemplate,
    backend: Backend,
    scoring: str = "probability_argmax",
    verbalizer: Verbalizer = DEFAULT_VERBALIZER,
    aspect_override: str | None = None,
    plural: bool = False,
) -> ClassDistribution:
    """Entailment over the good/bad hypothesis pair, premise = review text."""
    aspect = aspect_override if aspect_override is not None else example.aspect
    pair = render_hypotheses(template, aspect, verbalizer, plural=plural)
    positive_logits = backend.nli_score(example.text, pair.positive_hypothesis)
    negative_logits = backend.nli_score(example.text, pair.negative_hypothesis)
    scores = nli_class_scores(positive_logits, negative_logits, scoring)
    if scoring == "logit_softmax":
        return ClassDistribution(*softmax(scores))
    return _normalized(scores)


def baseline_predict(example: LabeledExample, backend: Backend, kind: str) -> ClassDistribution:
    """Softmax over pair-classification logits; no prompt involved."""
    if kind not in BASELINE_HEADS:
        raise HeadError(f"kind must be one of {BASELINE_HEADS}, got {kind!r}")
    readout = kind.removeprefix("baseline_")
    if getattr(backend, "readout", None) != readout:
        raise HeadError(
            f"{kind} requires a pair classifier configured with readout={readout!r}, "
            f"got {getattr(backend, 'readout', None)!r}"
        )
    logits = backend.pair_classify(example.text, example.aspect)
    return ClassDistribution(*softmax(logits.scores))


def predict(
    head: str,
    example: LabeledExample,
    backend: Backend,
    template: PromptTemplate | None = None,
    verbalizer: Verbalizer = DEFAULT_VERBALIZER,
    nli_scoring: str = "probability_argmax",
    aspect_override: str | None = None,
    plural: bool = False,
) -> ClassDistribution:
    """Dispatch to the head-specific prediction path."""
    if head in ("lm_cloze", "lm_next_word"):
        if template is None:
            raise HeadError(f"{head} requires a template")
        mode = "cloze" if head == "lm_cloze" else "next_word"
        return lm_predict(example, template, verbalizer, backend, mode=mode,
                          aspect_override=aspect_override, plural=plural)
    if head == "nli":
        if template is None:
            raise HeadError("nli requires a template")
        return nli_predict(example, template, backend, scoring=nli_scoring,
                           verbalizer=verbalizer, aspect_override=aspect_override,
                           plural=plural)
    if head in BASELINE_HEADS:
        return baseline_predict(example, backend, kind=head)
    raise HeadError(f"unknown head {head!r}")


def training_loss(head: str, example: LabeledExample, distribution: ClassDistribution) -> float:
    """Cross-entropy of the gold polarity under the head's trained-mode
    distribution (restricted label words for LM heads, three-way softmax
    for NLI and baselines)."""
    if head not in HEAD_KINDS:
        raise HeadError(f"unknown head {head!r}")
    p = distribution.probability(example.polarity)
    if p <= 0:
        raise HeadError(f"non-finite loss: gold class probability is {p}")
    return -math.log(p)


def build_training_instances(
    head: str,
    examples: Sequence[LabeledExample],
    backend: Backend,
    template: PromptTemplate | None = None,
    verbalizer: Verbalizer = DEFAULT_VERBALIZER,
) -> list[TrainingInstance]:
    """Convert labeled examples into backend training instances for a head."""
    instances = []
    if head in ("lm_cloze", "lm_next_word"):
        if template is None:
            raise HeadError(f"{head} requires a template")
        scoring = resolve_scoring_words(backend, verbalizer.label_words)
        candidates = tuple(scoring[verbalizer.verbalize(p)] for p in POLARITY_ORDER)
        for ex in examples:
            target = scoring[verbalizer.verbalize(ex.polarity)]
            if head == "lm_cloze":
                rendered = render_cloze(template, ex.aspect, ex.text, mask_token=backend.mask_token)
            else:
                rendered = render_next_word(template, ex.aspect, ex.text)
            instances.append(TrainingInstance(
                loss_kind=LOSS_LABEL_WORD, text=rendered.full_text, target=target,
                candidates=candidates, suffix=rendered.suffix,
            ))
    elif head == "nli":
        if template is None:
            raise HeadError("nli requires a template")
        for ex in examples:
            pair = render_hypotheses(template, ex.aspect, verbalizer)
            instances.append(TrainingInstance(
                loss_kind=LOSS_THREE_WAY, text=ex.text, target=ex.polarity,
                hypotheses=(pair.positive_hypothesis, pair.negative_hypothesis),
            ))
    elif head in BASELINE_HEADS:
        for ex in examples:
            instances.append(TrainingInstance(
                loss_kind=LOSS_THREE_WAY, text=ex.text, target=ex.polarity,
                aspect=ex.aspect,
            ))
    else:
        raise HeadError(f"unknown head {head!r}")
    return instances
