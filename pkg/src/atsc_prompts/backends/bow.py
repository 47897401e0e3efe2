"""Self-contained bag-of-words backends for desk-scale runs.

A hashed unigram+bigram featurizer feeds a single linear layer per model.
These backends satisfy the full scoring/training contract without any
pretrained weights, which makes grid orchestration, determinism, and
training-loss behavior testable offline. They are reference machinery,
not a substitute for transformer backends on real evaluations.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .base import (
    Backend,
    BackendDescriptor,
    BackendError,
    FitResult,
    LOSS_CAUSAL_LM,
    LOSS_LABEL_WORD,
    LOSS_MASKED_LM,
    LOSS_THREE_WAY,
    NliLogits,
    PairLogits,
    TokenDistribution,
    TrainingInstance,
    TrainingSchedule,
)

DEFAULT_FEATURE_DIM = 2048
DEFAULT_LEARNING_RATE = 0.5

_WORD = re.compile(r"\w+(?:'\w+)?|[^\w\s]")

# Enough vocabulary for full-distribution queries to be meaningful.
DEFAULT_VOCABULARY = (
    "good", "ok", "bad", "great", "terrible", "fine", "nice", "awful",
    "excellent", "poor", "decent", "mediocre", "amazing", "horrible",
    "the", "a", "an", "i", "it", "is", "was", "were", "are", "and", "but",
    "not", "very", "really", "food", "service", "screen", "battery",
    "keyboard", "price", "staff", "quality", "place", "laptop", "slow",
    "fast", "love", "hate", "like", "feel", "felt", "made", "me", "this",
    "that", "with", "for", "of", "to", "in", "on", ".", ",", "!", "?",
)


def _hash_bucket(token: str, dim: int) -> int:
    digest = hashlib.md5(token.encode("utf-8")).hexdigest()[:8]
    return int(digest, 16) % dim


def hashed_features(text: str, dim: int = DEFAULT_FEATURE_DIM) -> torch.Tensor:
    """Stable (process-independent) unigram+bigram count features."""
    tokens = _WORD.findall(text.lower())
    vec = torch.zeros(dim)
    for i, tok in enumerate(tokens):
        vec[_hash_bucket(tok, dim)] += 1.0
        if i + 1 < len(tokens):
            vec[_hash_bucket(tok + "_" + tokens[i + 1], dim)] += 1.0
    return vec


_CROSS_TOKEN_CAP = 40


def cross_features(first: str, second: str, dim: int = DEFAULT_FEATURE_DIM) -> torch.Tensor:
    """Hashed word-pair interactions between two texts.

    A linear model over concatenated features alone cannot represent
    premise/hypothesis (or review/aspect) association; pair buckets make
    it learnable.
    """
    a = _WORD.findall(first.lower())[:_CROSS_TOKEN_CAP]
    b = _WORD.findall(second.lower())[:_CROSS_TOKEN_CAP]
    vec = torch.zeros(dim)
    for tok_a in a:
        for tok_b in b:
            vec[_hash_bucket(tok_a + "||" + tok_b, dim)] += 1.0
    return vec


class _BagOfWordsBackend(Backend):
    """Shared featurizer, linear core, and fit loop."""

    def __init__(self, descriptor: BackendDescriptor, out_dim: int,
                 feature_multiple: int = 1, dim: int = DEFAULT_FEATURE_DIM, init_seed: int = 0):
        self.descriptor = descriptor
        self.dim = dim
        self.init_seed = init_seed
        generator = torch.Generator().manual_seed(init_seed)
        self._model = torch.nn.Linear(dim * feature_multiple, out_dim)
        with torch.no_grad():
            self._model.weight.copy_(torch.normal(
                0.0, 0.02, self._model.weight.shape, generator=generator))
            self._model.bias.zero_()

    def _features(self, text: str) -> torch.Tensor:
        return hashed_features(text, self.dim)

    def _batch_loss(self, batch: Sequence[TrainingInstance]) -> tuple[torch.Tensor | None, int]:
        raise NotImplementedError

    def fit(self, instances: Sequence[TrainingInstance], schedule: TrainingSchedule) -> FitResult:
        instances = list(instances)
        if not instances:
            raise BackendError("fit called with no training instances")
        for param in self._model.parameters():
            param.requires_grad_(True)
        lr = schedule.learning_rate if schedule.learning_rate is not None else DEFAULT_LEARNING_RATE
        optimizer = torch.optim.AdamW(self._model.parameters(), lr=lr)
        order = np.random.RandomState(schedule.seed)
        result = FitResult(instances=len(instances))
        for epoch in range(schedule.epochs):
            perm = order.permutation(len(instances))
            total, count = 0.0, 0
            for start in range(0, len(perm), schedule.batch_size):
                batch = [instances[i] for i in perm[start:start + schedule.batch_size]]
                loss, weight = self._batch_loss(batch)
                if loss is None:
                    continue
                if not math.isfinite(loss.item()):
                    raise BackendError(
                        f"non-finite training loss {loss.item()!r} at epoch {epoch}, "
                        f"batch starting {start} (loss kinds: {sorted({b.loss_kind for b in batch})})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * weight
                count += weight
            result.epoch_losses.append(total / count if count else math.nan)
        return result

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self._model.state_dict(), directory / "weights.pt")
        meta = {"kind": type(self).__name__, "dim": self.dim, "init_seed": self.init_seed,
                "descriptor": {"family": self.descriptor.family,
                               "provenance": self.descriptor.provenance,
                               "domain": self.descriptor.domain}}
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))

    def load_weights(self, directory: str | Path) -> None:
        state = torch.load(Path(directory) / "weights.pt", weights_only=True)
        self._model.load_state_dict(state)


class _VocabularyScoringBackend(_BagOfWordsBackend):
    """Common machinery for backends scoring a fixed word vocabulary."""

    def __init__(self, descriptor: BackendDescriptor,
                 vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
                 dim: int = DEFAULT_FEATURE_DIM, init_seed: int = 0):
        self.vocabulary = tuple(dict.fromkeys(vocabulary))
        self._word_index = {w: i for i, w in enumerate(self.vocabulary)}
        super().__init__(descriptor, out_dim=len(self.vocabulary), dim=dim, init_seed=init_seed)

    def is_single_vocabulary_item(self, word: str) -> bool:
        return word in self._word_index

    def _distribution(self, text: str, candidates: Sequence[str] | None) -> TokenDistribution:
        with torch.no_grad():
            probs = torch.softmax(self._model(self._features(text)), dim=-1)
        if candidates is None:
            entries = {w: probs[i].item() for w, i in self._word_index.items()}
            return TokenDistribution(entries=entries, normalized=True)
        missing = [w for w in candidates if w not in self._word_index]
        if missing:
            raise BackendError(f"candidates not in vocabulary: {missing}")
        entries = {w: probs[self._word_index[w]].item() for w in candidates}
        return TokenDistribution(entries=entries, normalized=False)

    def _restricted_loss(self, instance: TrainingInstance, features: torch.Tensor) -> torch.Tensor:
        candidates = instance.candidates or (instance.target,)
        missing = [w for w in candidates if w not in self._word_index]
        if missing:
            raise BackendError(f"training candidates not in vocabulary: {missing}")
        ids = torch.tensor([self._word_index[w] for w in candidates])
        logits = self._model(features)[ids]
        target = torch.tensor(candidates.index(instance.target))
        return torch.nn.functional.cross_entropy(logits.unsqueeze(0), target.unsqueeze(0))


class BagOfWordsMaskedLM(_VocabularyScoringBackend):

    DEFAULT_MASK_TOKEN = "[MASK]"

    @property
    def mask_token(self) -> str:
        return self.DEFAULT_MASK_TOKEN

    def mask_fill(self, text_with_mask: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        occurrences = text_with_mask.count(self.mask_token)
        if occurrences != 1:
            raise BackendError(f"expected exactly one {self.mask_token}, found {occurrences}")
        visible = text_with_mask.replace(self.mask_token, " ")
        return self._distribution(visible, candidates)

    def _batch_loss(self, batch):
        losses, weight = [], 0
        for instance in batch:
            if instance.loss_kind == LOSS_LABEL_WORD:
                visible = instance.text.replace(self.mask_token, " ")
                losses.append(self._restricted_loss(instance, self._features(visible)))
                weight += 1
            elif instance.loss_kind == LOSS_MASKED_LM:
                for start, end in instance.masked_spans:
                    word = instance.text[start:end].lower()
                    if word not in self._word_index:
                        continue
                    visible = instance.text[:start] + " " + instance.text[end:]
                    logits = self._model(self._features(visible))
                    target = torch.tensor(self._word_index[word])
                    losses.append(torch.nn.functional.cross_entropy(
                        logits.unsqueeze(0), target.unsqueeze(0)))
                    weight += 1
            else:
                raise BackendError(f"masked-LM backend cannot train on {instance.loss_kind}")
        if not losses:
            return None, 0
        return torch.stack(losses).mean(), weight


class BagOfWordsCausalLM(_VocabularyScoringBackend):

    def next_token(self, prefix: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        return self._distribution(prefix, candidates)

    def _batch_loss(self, batch):
        losses, weight = [], 0
        for instance in batch:
            if instance.loss_kind == LOSS_LABEL_WORD:
                losses.append(self._restricted_loss(instance, self._features(instance.text)))
                weight += 1
            elif instance.loss_kind == LOSS_CAUSAL_LM:
                words = instance.text.split()
                if len(words) < 2 or words[-1].lower() not in self._word_index:
                    continue
                logits = self._model(self._features(" ".join(words[:-1])))
                target = torch.tensor(self._word_index[words[-1].lower()])
                losses.append(torch.nn.functional.cross_entropy(
                    logits.unsqueeze(0), target.unsqueeze(0)))
                weight += 1
            else:
                raise BackendError(f"causal-LM backend cannot train on {instance.loss_kind}")
        if not losses:
            return None, 0
        return torch.stack(losses).mean(), weight


class BagOfWordsNli(_BagOfWordsBackend):
    """Premise/hypothesis scoring from concatenated features."""

    def __init__(self, descriptor: BackendDescriptor | None = None,
                 dim: int = DEFAULT_FEATURE_DIM, init_seed: int = 0):
        descriptor = descriptor or BackendDescriptor(family="nli")
        super().__init__(descriptor, out_dim=3, feature_multiple=3, dim=dim, init_seed=init_seed)

    def is_single_vocabulary_item(self, word: str) -> bool:
        return True  # hashing admits any word

    def _pair_features(self, premise: str, hypothesis: str) -> torch.Tensor:
        return torch.cat([self._features(premise), self._features(hypothesis),
                          cross_features(premise, hypothesis, self.dim)])

    def nli_score(self, premise: str, hypothesis: str) -> NliLogits:
        if not premise or not hypothesis:
            raise BackendError("premise and hypothesis must be non-empty")
        with torch.no_grad():
            logits = self._model(self._pair_features(premise, hypothesis))
        return NliLogits(entail=logits[0].item(), neutral=logits[1].item(),
                         contradict=logits[2].item())

    def _batch_loss(self, batch):
        from ..heads import POLARITY_ORDER  # local import to avoid a cycle
        losses = []
        for instance in batch:
            if instance.loss_kind != LOSS_THREE_WAY or instance.hypotheses is None:
                raise BackendError(f"NLI backend cannot train on {instance.loss_kind} without hypotheses")
            logits_pos = self._model(self._pair_features(instance.text, instance.hypotheses[0]))
            logits_neg = self._model(self._pair_features(instance.text, instance.hypotheses[1]))
            # Class scores follow the prediction rule: entailment per
            # hypothesis, neutral averaged across the two.
            scores = torch.stack([
                logits_pos[0],
                logits_neg[0],
                (logits_pos[1] + logits_neg[1]) / 2,
            ])
            target = torch.tensor(POLARITY_ORDER.index(instance.target))
            losses.append(torch.nn.functional.cross_entropy(
                scores.unsqueeze(0), target.unsqueeze(0)))
        if not losses:
            return None, 0
        return torch.stack(losses).mean(), len(losses)


class BagOfWordsPairClassifier(_BagOfWordsBackend):
    """(review, aspect) classification over the three polarities.

    Carries one parameter set per readout so a single registry entry can
    serve both baseline heads; set_readout picks the active one.
    """

    READOUTS = ("cls", "nsp")

    def __init__(self, descriptor: BackendDescriptor | None = None, readout: str = "cls",
                 dim: int = DEFAULT_FEATURE_DIM, init_seed: int = 0):
        descriptor = descriptor or BackendDescriptor(family="pair_classifier")
        super().__init__(descriptor, out_dim=3, feature_multiple=3, dim=dim, init_seed=init_seed)
        generator = torch.Generator().manual_seed(init_seed + 1)
        spare = torch.nn.Linear(self._model.in_features, 3)
        with torch.no_grad():
            spare.weight.copy_(torch.normal(0.0, 0.02, spare.weight.shape, generator=generator))
            spare.bias.zero_()
        self._heads = {"cls": self._model, "nsp": spare}
        self.set_readout(readout)

    def set_readout(self, readout: str) -> None:
        if readout not in self.READOUTS:
            raise ValueError(f"readout must be one of {self.READOUTS}, got {readout!r}")
        self.readout = readout
        self._model = self._heads[readout]

    def is_single_vocabulary_item(self, word: str) -> bool:
        return True

    def _pair_features(self, text: str, aspect: str) -> torch.Tensor:
        return torch.cat([self._features(text), self._features(aspect),
                          cross_features(text, aspect, self.dim)])

    def pair_classify(self, text: str, aspect: str) -> PairLogits:
        if not text or not aspect:
            raise BackendError("text and aspect must be non-empty")
        with torch.no_grad():
            logits = self._model(self._pair_features(text, aspect))
        return PairLogits(scores=(logits[0].item(), logits[1].item(), logits[2].item()))

    def _batch_loss(self, batch):
        from ..heads import POLARITY_ORDER
        losses = []
        for instance in batch:
            if instance.loss_kind != LOSS_THREE_WAY:
                raise BackendError(f"pair classifier cannot train on {instance.loss_kind}")
            logits = self._model(self._pair_features(instance.text, instance.aspect))
            target = torch.tensor(POLARITY_ORDER.index(instance.target))
            losses.append(torch.nn.functional.cross_entropy(
                logits.unsqueeze(0), target.unsqueeze(0)))
        if not losses:
            return None, 0
        return torch.stack(losses).mean(), len(losses)
