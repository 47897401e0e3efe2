"""Transformer backends over torch + transformers.

Weights load from local directories only (no network fetch at test time).
When an input exceeds the length budget, review/premise tokens are dropped
from the left so the prompt or hypothesis always survives intact.
"""

from __future__ import annotations

import inspect
import math
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

try:  # progress bars pollute batch logs
    from transformers.utils import logging as _hf_logging
    _hf_logging.disable_progress_bar()
except Exception:  # pragma: no cover
    pass

DEFAULT_LEARNING_RATE = 3e-5
DEFAULT_MAX_LENGTH = 256


class _TransformerBackend(Backend):
    """Shared encoding, truncation, and fit loop."""

    shareable = False  # scoring shares one torch module; the harness serializes

    def __init__(self, model, tokenizer, descriptor: BackendDescriptor,
                 max_length: int = DEFAULT_MAX_LENGTH):
        self.model = model
        self.tokenizer = tokenizer
        self.descriptor = descriptor
        position_budget = (getattr(model.config, "max_position_embeddings", None)
                           or getattr(model.config, "n_positions", None))
        self.max_length = min(max_length, int(position_budget)) if position_budget else max_length
        self.model.eval()
        self._forward_params = set(inspect.signature(model.forward).parameters)
        self._specials_single = len(tokenizer("x")["input_ids"]) - len(
            tokenizer("x", add_special_tokens=False)["input_ids"])

    # -- encoding ---------------------------------------------------------

    def _encode(self, texts: Sequence[str], pairs: Sequence[str] | None = None) -> dict:
        kwargs = {"padding": True, "return_tensors": "pt"}
        if "token_type_ids" in self._forward_params:
            kwargs["return_token_type_ids"] = True
        encoded = self.tokenizer(list(texts), list(pairs) if pairs is not None else None, **kwargs)
        return {k: v for k, v in encoded.items() if k in self._forward_params}

    def truncate_left(self, text: str, budget: int) -> str:
        """Suffix of `text` whose tokenization fits in `budget` tokens.

        Cuts at whitespace boundaries so the kept suffix retokenizes
        identically; loops in the rare case a boundary cut still overflows.
        """
        if budget < 1:
            raise BackendError(f"length budget exhausted (budget={budget})")
        adjust = True
        while True:
            encoded = self.tokenizer(text, add_special_tokens=False,
                                     return_offsets_mapping=True)
            ids = encoded["input_ids"]
            if len(ids) <= budget:
                return text
            cut = encoded["offset_mapping"][len(ids) - budget][0]
            if adjust:
                while 0 < cut < len(text) and not text[cut - 1].isspace():
                    cut += 1
            if cut >= len(text):
                raise BackendError(f"cannot fit any of {text[:40]!r}... into budget {budget}")
            text = text[cut:].lstrip()
            adjust = False  # strict token cut if a boundary cut was not enough

    # -- training ---------------------------------------------------------

    SUPPORTED_LOSSES: tuple[str, ...] = ()
    _default_learning_rate = DEFAULT_LEARNING_RATE

    def _trainable_modules(self) -> list[torch.nn.Module]:
        return [self.model]

    def _batch_loss(self, batch: Sequence[TrainingInstance]) -> tuple[torch.Tensor | None, int]:
        raise NotImplementedError

    def _set_training(self, training: bool) -> None:
        for module in self._trainable_modules():
            module.train(training)

    def fit(self, instances: Sequence[TrainingInstance], schedule: TrainingSchedule) -> FitResult:
        instances = list(instances)
        if not instances:
            raise BackendError("fit called with no training instances")
        unsupported = {i.loss_kind for i in instances} - set(self.SUPPORTED_LOSSES)
        if unsupported:
            raise BackendError(f"{type(self).__name__} cannot train on {sorted(unsupported)}")
        parameters = []
        for module in self._trainable_modules():
            for param in module.parameters():
                param.requires_grad_(True)  # full finetuning, nothing frozen
                parameters.append(param)
        lr = schedule.learning_rate if schedule.learning_rate is not None else self._default_learning_rate
        optimizer = torch.optim.AdamW(parameters, lr=lr)
        torch.manual_seed(schedule.seed)
        order = np.random.RandomState(schedule.seed)
        self._set_training(True)
        result = FitResult(instances=len(instances))
        try:
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
        finally:
            self._set_training(False)
        return result

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory)
        self.tokenizer.save_pretrained(directory)


class TransformerMaskedLM(_TransformerBackend):

    SUPPORTED_LOSSES = (LOSS_LABEL_WORD, LOSS_MASKED_LM)

    @property
    def mask_token(self) -> str:
        return self.tokenizer.mask_token

    def _single_token_id(self, word: str) -> int:
        token_id = self.tokenizer.convert_tokens_to_ids(word)
        if token_id is not None and token_id != self.tokenizer.unk_token_id:
            return token_id
        pieces = self.tokenizer.tokenize(word)
        if len(pieces) != 1 or pieces[0] == self.tokenizer.unk_token:
            raise BackendError(f"{word!r} is not a single vocabulary item (pieces: {pieces})")
        return self.tokenizer.convert_tokens_to_ids(pieces[0])

    def is_single_vocabulary_item(self, word: str) -> bool:
        try:
            self._single_token_id(word)
            return True
        except BackendError:
            return False

    def first_vocabulary_item(self, word: str) -> str:
        pieces = self.tokenizer.tokenize(word)
        if not pieces:
            raise BackendError(f"{word!r} produced no vocabulary items")
        return pieces[0]

    def mask_fill(self, text_with_mask: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        occurrences = text_with_mask.count(self.tokenizer.mask_token)
        if occurrences != 1:
            raise BackendError(f"expected exactly one mask token, found {occurrences}")
        text = self.truncate_left(text_with_mask, self.max_length - self._specials_single)
        encoded = self._encode([text])
        mask_positions = (encoded["input_ids"][0] == self.tokenizer.mask_token_id).nonzero()
        if len(mask_positions) != 1:
            raise BackendError("mask token lost to left truncation; shorten the prompt")
        with torch.no_grad():
            logits = self.model(**encoded).logits[0, mask_positions[0, 0]]
        probs = torch.softmax(logits, dim=-1)
        if candidates is None:
            tokens = self.tokenizer.convert_ids_to_tokens(list(range(len(probs))))
            entries = {tok: probs[i].item() for i, tok in enumerate(tokens)}
            return TokenDistribution(entries=entries, normalized=True)
        entries = {w: probs[self._single_token_id(w)].item() for w in candidates}
        return TokenDistribution(entries=entries, normalized=False)

    def _batch_loss(self, batch):
        label_word = [i for i in batch if i.loss_kind == LOSS_LABEL_WORD]
        masked = [i for i in batch if i.loss_kind == LOSS_MASKED_LM]
        losses, weight = [], 0
        if label_word:
            loss, n = self._label_word_loss(label_word)
            losses.append(loss * n)
            weight += n
        if masked:
            out = self._masked_lm_loss(masked)
            if out is not None:
                loss, n = out
                losses.append(loss * n)
                weight += n
        if not losses:
            return None, 0
        return sum(losses) / weight, weight

    def _label_word_loss(self, instances):
        budget = self.max_length - self._specials_single
        texts = [self.truncate_left(i.text, budget) for i in instances]
        encoded = self._encode(texts)
        is_mask = encoded["input_ids"] == self.tokenizer.mask_token_id
        if not bool((is_mask.sum(dim=1) == 1).all()):
            raise BackendError("each label-word instance must contain exactly one mask")
        positions = is_mask.nonzero()
        logits = self.model(**encoded).logits
        at_mask = logits[positions[:, 0], positions[:, 1]]
        candidate_ids = torch.tensor([
            [self._single_token_id(w) for w in i.candidates] for i in instances])
        restricted = at_mask.gather(1, candidate_ids)
        targets = torch.tensor([i.candidates.index(i.target) for i in instances])
        return torch.nn.functional.cross_entropy(restricted, targets), len(instances)

    def apply_masked_spans(self, text: str, spans) -> tuple[list[int], list[int]]:
        """Map masked character spans onto sub-word units.

        Every sub-token overlapping a span is replaced by the mask token
        (whole-word masking falls out of span overlap); labels carry the
        original ids at masked positions and -100 elsewhere.
        """
        encoded = self.tokenizer(text, return_offsets_mapping=True,
                                 truncation=True, max_length=self.max_length)
        ids = list(encoded["input_ids"])
        labels = [-100] * len(ids)
        for start, end in spans:
            for pos, (ts, te) in enumerate(encoded["offset_mapping"]):
                if ts == te:  # special token
                    continue
                if ts < end and start < te:  # overlap: mask the whole word
                    labels[pos] = ids[pos]
                    ids[pos] = self.tokenizer.mask_token_id
        return ids, labels

    def _masked_lm_loss(self, instances):
        rows = []
        for instance in instances:
            ids, labels = self.apply_masked_spans(instance.text, instance.masked_spans)
            if any(l != -100 for l in labels):
                rows.append((ids, labels))
        if not rows:
            return None  # nothing maskable in this batch
        width = max(len(ids) for ids, _ in rows)
        pad = self.tokenizer.pad_token_id
        input_ids = torch.tensor([ids + [pad] * (width - len(ids)) for ids, _ in rows])
        attention = torch.tensor([[1] * len(ids) + [0] * (width - len(ids)) for ids, _ in rows])
        labels = torch.tensor([lab + [-100] * (width - len(lab)) for _, lab in rows])
        batch = {"input_ids": input_ids, "attention_mask": attention}
        if "token_type_ids" in self._forward_params:
            batch["token_type_ids"] = torch.zeros_like(input_ids)
        out = self.model(**batch, labels=labels)
        return out.loss, len(rows)


class TransformerCausalLM(_TransformerBackend):

    SUPPORTED_LOSSES = (LOSS_LABEL_WORD, LOSS_CAUSAL_LM)

    def __init__(self, model, tokenizer, descriptor, max_length: int = DEFAULT_MAX_LENGTH):
        if tokenizer.pad_token is None:
            tokenizer.pad_token = tokenizer.eos_token
        super().__init__(model, tokenizer, descriptor, max_length)

    def _candidate_token_id(self, word: str) -> int:
        token_id = self.tokenizer.convert_tokens_to_ids(word)
        if token_id is not None and token_id != self.tokenizer.unk_token_id:
            return token_id
        for form in (" " + word, word):  # mid-sentence continuation first
            pieces = self.tokenizer.tokenize(form)
            if len(pieces) == 1 and pieces[0] != self.tokenizer.unk_token:
                return self.tokenizer.convert_tokens_to_ids(pieces[0])
        raise BackendError(f"{word!r} is not a single vocabulary item")

    def is_single_vocabulary_item(self, word: str) -> bool:
        try:
            self._candidate_token_id(word)
            return True
        except BackendError:
            return False

    def first_vocabulary_item(self, word: str) -> str:
        pieces = self.tokenizer.tokenize(" " + word) or self.tokenizer.tokenize(word)
        if not pieces:
            raise BackendError(f"{word!r} produced no vocabulary items")
        return pieces[0]

    def next_token(self, prefix: str, candidates: Sequence[str] | None = None) -> TokenDistribution:
        prefix = self.truncate_left(prefix, self.max_length - 1 - self._specials_single)
        encoded = self._encode([prefix])
        last = int(encoded["attention_mask"][0].sum()) - 1
        with torch.no_grad():
            logits = self.model(**encoded).logits[0, last]
        probs = torch.softmax(logits, dim=-1)
        if candidates is None:
            tokens = self.tokenizer.convert_ids_to_tokens(list(range(len(probs))))
            entries = {tok: probs[i].item() for i, tok in enumerate(tokens)}
            return TokenDistribution(entries=entries, normalized=True)
        entries = {w: probs[self._candidate_token_id(w)].item() for w in candidates}
        return TokenDistribution(entries=entries, normalized=False)

    def _batch_loss(self, batch):
        label_word = [i for i in batch if i.loss_kind == LOSS_LABEL_WORD]
        windows = [i for i in batch if i.loss_kind == LOSS_CAUSAL_LM]
        losses, weight = [], 0
        if label_word:
            budget = self.max_length - 1 - self._specials_single
            texts = [self.truncate_left(i.text, budget) for i in label_word]
            encoded = self._encode(texts)
            lasts = encoded["attention_mask"].sum(dim=1) - 1
            logits = self.model(**encoded).logits
            at_end = logits[torch.arange(len(label_word)), lasts]
            candidate_ids = torch.tensor([
                [self._candidate_token_id(w) for w in i.candidates] for i in label_word])
            restricted = at_end.gather(1, candidate_ids)
            targets = torch.tensor([i.candidates.index(i.target) for i in label_word])
            losses.append(torch.nn.functional.cross_entropy(restricted, targets) * len(label_word))
            weight += len(label_word)
        if windows:
            texts = [self.truncate_left(i.text, self.max_length) for i in windows]
            encoded = self._encode(texts)
            labels = encoded["input_ids"].clone()
            labels[encoded["attention_mask"] == 0] = -100
            out = self.model(**encoded, labels=labels)
            losses.append(out.loss * len(windows))
            weight += len(windows)
        if not losses:
            return None, 0
        return sum(losses) / weight, weight


class TransformerNli(_TransformerBackend):
    """Sequence classifier over (premise, hypothesis) with entail/neutral/
    contradict outputs; label order read from config or passed explicitly."""

    SUPPORTED_LOSSES = (LOSS_THREE_WAY,)

    def __init__(self, model, tokenizer, descriptor, max_length: int = DEFAULT_MAX_LENGTH,
                 label_order: Sequence[str] | None = None):
        super().__init__(model, tokenizer, descriptor, max_length)
        self._label_index = self._resolve_labels(label_order)
        self._specials_pair = (
            len(tokenizer("x", "y")["input_ids"])
            - 2 * len(tokenizer("x", add_special_tokens=False)["input_ids"])
        )

    def _resolve_labels(self, label_order: Sequence[str] | None) -> dict[str, int]:
        if label_order is not None:
            names = [str(n).lower() for n in label_order]
        else:
            id2label = getattr(self.model.config, "id2label", None) or {}
            names = [str(id2label.get(i, "")).lower() for i in range(3)]
        index = {}
        for role, needle in (("entail", "entail"), ("neutral", "neutral"), ("contradict", "contra")):
            matches = [i for i, name in enumerate(names) if needle in name]
            if len(matches) != 1:
                raise BackendError(
                    f"cannot resolve NLI label order from {names}; pass label_order="
                    "('contradiction','neutral','entailment')-style names in model index order"
                )
            index[role] = matches[0]
        return index

    def is_single_vocabulary_item(self, word: str) -> bool:
        return True  # no restricted-vocabulary scoring surface

    def _pair_logits(self, premises: Sequence[str], hypotheses: Sequence[str]) -> torch.Tensor:
        fitted = []
        for premise, hypothesis in zip(premises, hypotheses):
            if not premise or not hypothesis:
                raise BackendError("premise and hypothesis must be non-empty")
            hyp_len = len(self.tokenizer(hypothesis, add_special_tokens=False)["input_ids"])
            budget = self.max_length - hyp_len - self._specials_pair
            fitted.append(self.truncate_left(premise, budget))
        encoded = self._encode(fitted, hypotheses)
        return self.model(**encoded).logits

    def nli_score(self, premise: str, hypothesis: str) -> NliLogits:
        with torch.no_grad():
            logits = self._pair_logits([premise], [hypothesis])[0]
        return NliLogits(
            entail=logits[self._label_index["entail"]].item(),
            neutral=logits[self._label_index["neutral"]].item(),
            contradict=logits[self._label_index["contradict"]].item(),
        )

    def smoke_check(self, probe: str = "The screen is good.") -> bool:
        """Whether a sentence entails itself under this backend.

        Any well-trained NLI model passes; run once per weight set when
        installing it (catches label-order mistakes immediately).
        """
        logits = self.nli_score(probe, probe)
        return logits.entail >= max(logits.neutral, logits.contradict)

    def _batch_loss(self, batch):
        from ..heads import POLARITY_ORDER
        for instance in batch:
            if instance.hypotheses is None:
                raise BackendError("NLI training instances need a hypothesis pair")
        premises = [i.text for i in batch]
        logits_pos = self._pair_logits(premises, [i.hypotheses[0] for i in batch])
        logits_neg = self._pair_logits(premises, [i.hypotheses[1] for i in batch])
        entail, neutral = self._label_index["entail"], self._label_index["neutral"]
        # Class scores mirror the prediction rule: per-hypothesis entailment,
        # neutral averaged over the two hypotheses, softmax at logit level.
        scores = torch.stack([
            logits_pos[:, entail],
            logits_neg[:, entail],
            (logits_pos[:, neutral] + logits_neg[:, neutral]) / 2,
        ], dim=1)
        targets = torch.tensor([POLARITY_ORDER.index(i.target) for i in batch])
        return torch.nn.functional.cross_entropy(scores, targets), len(batch)


class TransformerPairClassifier(_TransformerBackend):
    """Encoder over (review, aspect) with a fresh 3-way head per readout.

    readout="cls" reads the final hidden state of the first position;
    readout="nsp" reads the encoder's pooled output (the tanh pooler that
    backs next-sentence prediction). One instance carries both heads so a
    single registry entry serves both baseline kinds; set_readout picks
    the active one.
    """

    SUPPORTED_LOSSES = (LOSS_THREE_WAY,)
    READOUTS = ("cls", "nsp")

    def __init__(self, model, tokenizer, descriptor, readout: str = "cls",
                 max_length: int = DEFAULT_MAX_LENGTH, head_seed: int = 0):
        super().__init__(model, tokenizer, descriptor, max_length)
        self._specials_pair = (
            len(tokenizer("x", "y")["input_ids"])
            - 2 * len(tokenizer("x", add_special_tokens=False)["input_ids"])
        )
        hidden = model.config.hidden_size
        self._heads = {}
        for offset, name in enumerate(self.READOUTS):
            generator = torch.Generator().manual_seed(head_seed + offset)
            head = torch.nn.Linear(hidden, 3)
            with torch.no_grad():
                head.weight.copy_(torch.normal(0.0, 0.02, head.weight.shape,
                                               generator=generator))
                head.bias.zero_()
            head.eval()
            self._heads[name] = head
        self.set_readout(readout)

    def set_readout(self, readout: str) -> None:
        if readout not in self.READOUTS:
            raise ValueError(f"readout must be one of {self.READOUTS}, got {readout!r}")
        self.readout = readout
        self.head = self._heads[readout]

    def is_single_vocabulary_item(self, word: str) -> bool:
        return True

    def _trainable_modules(self):
        return [self.model, self.head]

    def _pooled(self, texts: Sequence[str], aspects: Sequence[str]) -> torch.Tensor:
        fitted = []
        for text, aspect in zip(texts, aspects):
            if not text or not aspect:
                raise BackendError("text and aspect must be non-empty")
            aspect_len = len(self.tokenizer(aspect, add_special_tokens=False)["input_ids"])
            budget = self.max_length - aspect_len - self._specials_pair
            fitted.append(self.truncate_left(text, budget))
        encoded = self._encode(fitted, aspects)
        outputs = self.model(**encoded)
        if self.readout == "cls":
            return outputs.last_hidden_state[:, 0]
        pooled = getattr(outputs, "pooler_output", None)
        if pooled is None:
            raise BackendError("encoder provides no pooled output; nsp readout unavailable")
        return pooled

    def pair_classify(self, text: str, aspect: str) -> PairLogits:
        with torch.no_grad():
            logits = self.head(self._pooled([text], [aspect]))[0]
        return PairLogits(scores=(logits[0].item(), logits[1].item(), logits[2].item()))

    def _batch_loss(self, batch):
        from ..heads import POLARITY_ORDER
        logits = self.head(self._pooled([i.text for i in batch], [i.aspect for i in batch]))
        targets = torch.tensor([POLARITY_ORDER.index(i.target) for i in batch])
        return torch.nn.functional.cross_entropy(logits, targets), len(batch)

    def save(self, directory: str | Path) -> None:
        super().save(directory)
        for name, head in self._heads.items():
            torch.save(head.state_dict(), Path(directory) / f"classifier_head_{name}.pt")


# -- loaders ---------------------------------------------------------------

def load_masked_lm(path: str | Path, descriptor: BackendDescriptor | None = None,
                   max_length: int = DEFAULT_MAX_LENGTH) -> TransformerMaskedLM:
    from transformers import AutoModelForMaskedLM, AutoTokenizer
    descriptor = descriptor or BackendDescriptor(family="masked_lm")
    tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=True)
    model = AutoModelForMaskedLM.from_pretrained(path, local_files_only=True)
    return TransformerMaskedLM(model, tokenizer, descriptor, max_length)


def load_causal_lm(path: str | Path, descriptor: BackendDescriptor | None = None,
                   max_length: int = DEFAULT_MAX_LENGTH) -> TransformerCausalLM:
    from transformers import AutoModelForCausalLM, AutoTokenizer
    descriptor = descriptor or BackendDescriptor(family="causal_lm")
    tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=True)
    model = AutoModelForCausalLM.from_pretrained(path, local_files_only=True)
    return TransformerCausalLM(model, tokenizer, descriptor, max_length)


def load_nli(path: str | Path, descriptor: BackendDescriptor | None = None,
             max_length: int = DEFAULT_MAX_LENGTH,
             label_order: Sequence[str] | None = None) -> TransformerNli:
    from transformers import AutoModelForSequenceClassification, AutoTokenizer
    descriptor = descriptor or BackendDescriptor(family="nli")
    tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=True)
    model = AutoModelForSequenceClassification.from_pretrained(path, local_files_only=True)
    return TransformerNli(model, tokenizer, descriptor, max_length, label_order=label_order)


def load_pair_classifier(path: str | Path, descriptor: BackendDescriptor | None = None,
                         readout: str = "cls", max_length: int = DEFAULT_MAX_LENGTH,
                         head_seed: int = 0) -> TransformerPairClassifier:
    from transformers import AutoModel, AutoTokenizer
    descriptor = descriptor or BackendDescriptor(family="pair_classifier")
    tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=True)
    model = AutoModel.from_pretrained(path, local_files_only=True)
    return TransformerPairClassifier(model, tokenizer, descriptor, readout=readout,
                                     max_length=max_length, head_seed=head_seed)
