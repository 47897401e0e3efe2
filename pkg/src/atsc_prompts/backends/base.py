"""The scoring/training contract every pretrained-model backend satisfies.

Five capabilities isolate all learning-framework specifics: mask filling,
next-token scoring, premise/hypothesis NLI logits, pair classification,
and parameter updates. Concrete backends implement the subset matching
their family and raise UnsupportedCapability for the rest.
"""

from __future__ import annotations

import abc
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

log = logging.getLogger(__name__)

FAMILIES = ("masked_lm", "causal_lm", "nli", "pair_classifier")
PROVENANCES = ("generic", "domain_adapted")

LOSS_LABEL_WORD = "label_word_cross_entropy"
LOSS_THREE_WAY = "three_way_cross_entropy"
LOSS_MASKED_LM = "masked_lm"
LOSS_CAUSAL_LM = "causal_lm"
LOSS_KINDS = (LOSS_LABEL_WORD, LOSS_THREE_WAY, LOSS_MASKED_LM, LOSS_CAUSAL_LM)


class BackendError(RuntimeError):
    pass


class UnsupportedCapability(BackendError):
    pass


def softmax(scores: Sequence[float]) -> tuple[float, ...]:
    peak = max(scores)
    exps = [math.exp(s - peak) for s in scores]
    total = sum(exps)
    return tuple(e / total for e in exps)


@dataclass(frozen=True)
class TokenDistribution:
    """Probabilities over vocabulary items.

    Full-vocabulary queries are normalized (sum to 1 within 1e-4);
    candidate-restricted queries carry the raw probabilities of those
    items, unnormalized, and are tagged normalized=False.
    """

    entries: Mapping[str, float]
    normalized: bool

    def __post_init__(self):
        for word, p in self.entries.items():
            if p < 0 or not math.isfinite(p):
                raise BackendError(f"invalid probability {p!r} for {word!r}")
        if self.normalized:
            total = sum(self.entries.values())
            if abs(total - 1.0) > 1e-4:
                raise BackendError(f"full-vocabulary distribution sums to {total}, not 1")

    def probability(self, word: str) -> float:
        return self.entries[word]


@dataclass(frozen=True)
class NliLogits:
    """Unnormalized entail/neutral/contradict scores for one (premise, hypothesis)."""

    entail: float
    neutral: float
    contradict: float

    def __post_init__(self):
        for value in (self.entail, self.neutral, self.contradict):
            if not math.isfinite(value):
                raise BackendError(f"non-finite NLI logit {value!r}")

    def probabilities(self) -> tuple[float, float, float]:
        return softmax((self.entail, self.neutral, self.contradict))


@dataclass(frozen=True)
class PairLogits:
    """Three pair-classification scores, ordered (positive, negative, neutral)."""

    scores: tuple[float, float, float]

    def __post_init__(self):
        if len(self.scores) != 3 or not all(math.isfinite(s) for s in self.scores):
            raise BackendError(f"pair logits must be 3 finite reals, got {self.scores!r}")


@dataclass(frozen=True)
class BackendDescriptor:
    family: str
    provenance: str = "generic"
    domain: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if self.family == "nli" and self.provenance != "generic":
            raise ValueError("NLI backends are trained on NLI data only, never domain-adapted")
        if self.provenance == "domain_adapted" and self.domain is None:
            raise ValueError("domain_adapted backends must declare their domain")

    def key(self) -> tuple[str, str, str | None]:
        return (self.family, self.provenance, self.domain)


@dataclass(frozen=True)
class TrainingSchedule:
    """Optimization knobs. Epoch count follows the experimental protocol;
    batch size, learning rate, and length budget are artifact defaults,
    overridable from config. learning_rate=None means the backend's own
    default."""

    epochs: int = 20
    batch_size: int = 8
    learning_rate: float | None = None
    seed: int = 0
    max_length: int = 256


@dataclass(frozen=True)
class TrainingInstance:
    """One training item; fields beyond (text, target) depend on loss_kind.

    label_word_cross_entropy: text is a rendered prompt (cloze text with
        the backend mask token, or a next-word prefix), target is the label
        word, candidates are the restricted scoring words.
    three_way_cross_entropy: target is a polarity; either hypotheses
        carries the (positive, negative) pair with text as premise, or
        aspect carries the second segment of a classification pair.
    masked_lm: masked_spans are character spans of masked words in text.
    causal_lm: text is a plain window; targets are implicit.
    """

    loss_kind: str
    text: str
    target: str = ""
    aspect: str = ""
    hypotheses: tuple[str, str] | None = None
    candidates: tuple[str, ...] = ()
    masked_spans: tuple[tuple[int, int], ...] = ()
    suffix: str = ""

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")


@dataclass
class FitResult:
    epoch_losses: list[float] = field(default_factory=list)
    instances: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else math.nan

    @property
    def min_loss(self) -> float:
        return min(self.epoch_losses) if self.epoch_losses else math.nan


class Backend(abc.ABC):
    """Base class for scoring backends; subclasses override their capabilities."""

    descriptor: BackendDescriptor
    shareable: bool = True  # scoring may be called from multiple workers

    @property
    def mask_token(self) -> str:
        raise UnsupportedCapability(f"{type(self).__name__} has no mask token")

    def mask_fill(self, text_with_mask: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        raise UnsupportedCapability(f"{type(self).__name__} cannot fill masks")

    def next_token(self, prefix: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        raise UnsupportedCapability(f"{type(self).__name__} cannot score next tokens")

    def nli_score(self, premise: str, hypothesis: str) -> NliLogits:
        raise UnsupportedCapability(f"{type(self).__name__} cannot score entailment")

    def pair_classify(self, text: str, aspect: str) -> PairLogits:
        raise UnsupportedCapability(f"{type(self).__name__} cannot classify pairs")

    def fit(self, instances: Sequence[TrainingInstance], schedule: TrainingSchedule) -> FitResult:
        raise UnsupportedCapability(f"{type(self).__name__} cannot be trained")

    @abc.abstractmethod
    def is_single_vocabulary_item(self, word: str) -> bool:
        """Whether the backend scores `word` as one vocabulary item."""

    def first_vocabulary_item(self, word: str) -> str:
        """Fallback scoring item for a multi-piece word."""
        raise UnsupportedCapability(f"{type(self).__name__} cannot split {word!r}")


def resolve_scoring_words(backend: Backend, words: Sequence[str]) -> dict[str, str]:
    """Map each label word to the item the backend will actually score.

    Single-vocabulary-item words map to themselves. A multi-piece word
    falls back to its first sub-item with a capability warning, since
    restricted scoring presumes single-token label words.
    """
    resolved = {}
    for word in words:
        if backend.is_single_vocabulary_item(word):
            resolved[word] = word
        else:
            item = backend.first_vocabulary_item(word)
            log.warning(
                "label word %r is not a single vocabulary item for %s; scoring first sub-item %r",
                word, type(backend).__name__, item,
            )
            resolved[word] = item
    return resolved


def instance_to_record(instance: TrainingInstance) -> dict:
    record = {"loss_kind": instance.loss_kind, "text": instance.text}
    if instance.target:
        record["target"] = instance.target
    if instance.aspect:
        record["aspect"] = instance.aspect
    if instance.hypotheses is not None:
        record["hypotheses"] = list(instance.hypotheses)
    if instance.candidates:
        record["candidates"] = list(instance.candidates)
    if instance.masked_spans:
        record["masked_spans"] = [list(span) for span in instance.masked_spans]
    if instance.suffix:
        record["suffix"] = instance.suffix
    return record


def instance_from_record(record: Mapping) -> TrainingInstance:
    hypotheses = record.get("hypotheses")
    return TrainingInstance(
        loss_kind=record["loss_kind"],
        text=record["text"],
        target=record.get("target", ""),
        aspect=record.get("aspect", ""),
        hypotheses=tuple(hypotheses) if hypotheses is not None else None,
        candidates=tuple(record.get("candidates", ())),
        masked_spans=tuple(tuple(span) for span in record.get("masked_spans", ())),
        suffix=record.get("suffix", ""),
    )


class BackendRegistry:
    """Backend loaders keyed by (family, provenance, domain).

    Loaders construct fresh instances so each experiment cell can own its
    backend exclusively during fit.
    """

    def __init__(self):
        self._loaders: dict[tuple, Callable[[], Backend]] = {}

    def register(self, descriptor: BackendDescriptor, loader: Callable[[], Backend]) -> None:
        self._loaders[descriptor.key()] = loader

    def load(self, descriptor: BackendDescriptor) -> Backend:
        try:
            loader = self._loaders[descriptor.key()]
        except KeyError:
            raise BackendError(
                f"no backend registered for {descriptor.key()}; "
                f"available: {sorted(self._loaders)}"
            ) from None
        backend = loader()
        if backend.descriptor != descriptor:
            raise BackendError(
                f"loader returned descriptor {backend.descriptor}, expected {descriptor}"
            )
        return backend

    def available(self) -> list[BackendDescriptor]:
        return [BackendDescriptor(*key) for key in sorted(self._loaders, key=str)]
