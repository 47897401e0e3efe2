import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atsc_prompts.backends.base import (
    Backend,
    BackendDescriptor,
    NliLogits,
    PairLogits,
    TokenDistribution,
)
from atsc_prompts.corpus import LabeledExample
from atsc_prompts.heads import (
    ClassDistribution,
    HeadError,
    baseline_predict,
    build_training_instances,
    lm_predict,
    nli_class_scores,
    nli_predict,
    predict,
    training_loss,
)
from atsc_prompts.prompting import BUILTIN_TEMPLATES, DEFAULT_VERBALIZER

EXAMPLE = LabeledExample(text="Great machine overall.", aspect="battery", polarity="positive",
                         domain="laptops", aspect_kind="term", source_id="e1")

IS = BUILTIN_TEMPLATES["is"]


class ScriptedMaskedLM(Backend):
    """Returns fixed word probabilities regardless of the text."""

    def __init__(self, probs, single_items=None, first_items=None):
        self.descriptor = BackendDescriptor(family="masked_lm")
        self.probs = probs
        self.single_items = single_items
        self.first_items = first_items or {}
        self.calls = []

    @property
    def mask_token(self):
        return "[MASK]"

    def is_single_vocabulary_item(self, word):
        return word in self.single_items if self.single_items is not None else True

    def first_vocabulary_item(self, word):
        return self.first_items[word]

    def mask_fill(self, text, candidates=None):
        assert text.count("[MASK]") == 1
        self.calls.append(text)
        if candidates is not None:
            return TokenDistribution({w: self.probs.get(w, 0.0) for w in candidates},
                                     normalized=False)
        return TokenDistribution(self.probs, normalized=True)


class ScriptedCausalLM(ScriptedMaskedLM):
    def __init__(self, probs):
        super().__init__(probs)
        self.descriptor = BackendDescriptor(family="causal_lm")

    def next_token(self, prefix, candidates=None):
        self.calls.append(prefix)
        if candidates is not None:
            return TokenDistribution({w: self.probs.get(w, 0.0) for w in candidates},
                                     normalized=False)
        return TokenDistribution(self.probs, normalized=True)


class ScriptedNli(Backend):
    """Maps the label word found in the hypothesis to fixed logits."""

    def __init__(self, by_word):
        self.descriptor = BackendDescriptor(family="nli")
        self.by_word = by_word
        self.calls = []

    def is_single_vocabulary_item(self, word):
        return True

    def nli_score(self, premise, hypothesis):
        self.calls.append((premise, hypothesis))
        for word, logits in self.by_word.items():
            if word in hypothesis.split() or word in hypothesis:
                return NliLogits(*logits)
        raise AssertionError(f"no scripted logits for {hypothesis!r}")


class ScriptedPair(Backend):
    def __init__(self, scores, readout="cls"):
        self.descriptor = BackendDescriptor(family="pair_classifier")
        self.scores = scores
        self.readout = readout

    def is_single_vocabulary_item(self, word):
        return True

    def pair_classify(self, text, aspect):
        return PairLogits(scores=self.scores)


def logits_for_probs(p_entail, p_neutral, p_contradict):
    return (math.log(p_entail), math.log(p_neutral), math.log(p_contradict))


class TestClassDistribution:
    def test_validates_sum(self):
        with pytest.raises(HeadError):
            ClassDistribution(0.5, 0.2, 0.2)

    def test_argmax_tie_break(self):
        assert ClassDistribution(0.4, 0.4, 0.2).argmax() == "positive"
        assert ClassDistribution(0.3, 0.35, 0.35).argmax() == "negative"
        assert ClassDistribution(0.2, 0.3, 0.5).argmax() == "neutral"


class TestLmPredict:
    def test_already_normalized_probs(self):
        backend = ScriptedMaskedLM({"good": 0.6, "ok": 0.1, "bad": 0.3})
        dist = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="cloze")
        assert dist.as_tuple() == pytest.approx((0.6, 0.3, 0.1))

    def test_renormalization(self):
        backend = ScriptedMaskedLM({"good": 0.2, "ok": 0.1, "bad": 0.1})
        dist = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="cloze")
        assert dist.as_tuple() == pytest.approx((0.5, 0.25, 0.25))

    def test_next_word_mode_uses_prefix(self):
        backend = ScriptedCausalLM({"good": 0.3, "ok": 0.3, "bad": 0.4})
        dist = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="next_word")
        assert backend.calls == ["Great machine overall. The battery is"]
        assert dist.as_tuple() == pytest.approx((0.3, 0.4, 0.3))

    def test_invariant_to_out_of_label_mass(self):
        low_other = ScriptedMaskedLM({"good": 0.2, "ok": 0.1, "bad": 0.1, "fine": 0.6})
        high_other = ScriptedMaskedLM({"good": 0.2, "ok": 0.1, "bad": 0.1, "fine": 0.0,
                                       "the": 0.6})
        a = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, low_other, mode="cloze")
        b = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, high_other, mode="cloze")
        assert a.as_tuple() == pytest.approx(b.as_tuple())

    def test_degenerate_backend(self):
        backend = ScriptedMaskedLM({"good": 0.0, "ok": 0.0, "bad": 0.0})
        with pytest.raises(HeadError, match="degenerate"):
            lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="cloze")

    def test_multi_piece_label_word_falls_back_with_warning(self, caplog):
        backend = ScriptedMaskedLM(
            {"good": 0.5, "o": 0.2, "bad": 0.3},
            single_items={"good", "bad", "o"},
            first_items={"ok": "o"},
        )
        with caplog.at_level("WARNING"):
            dist = lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="cloze")
        assert dist.as_tuple() == pytest.approx((0.5, 0.3, 0.2))
        assert any("not a single vocabulary item" in r.message for r in caplog.records)

    def test_colliding_fallbacks_rejected(self):
        backend = ScriptedMaskedLM(
            {"g": 1.0},
            single_items={"g"},
            first_items={"good": "g", "ok": "g", "bad": "g"},
        )
        with pytest.raises(HeadError, match="collapse"):
            lm_predict(EXAMPLE, IS, DEFAULT_VERBALIZER, backend, mode="cloze")


class TestNliPredict:
    def test_probability_argmax_arithmetic(self):
        backend = ScriptedNli({
            "good": logits_for_probs(0.7, 0.2, 0.1),
            "bad": logits_for_probs(0.1, 0.2, 0.7),
        })
        dist = nli_predict(EXAMPLE, IS, backend, scoring="probability_argmax")
        assert dist.as_tuple() == pytest.approx((0.7, 0.1, 0.2))

    def test_premise_is_review_and_hypotheses_lack_review(self):
        backend = ScriptedNli({
            "good": logits_for_probs(0.5, 0.3, 0.2),
            "bad": logits_for_probs(0.2, 0.3, 0.5),
        })
        nli_predict(EXAMPLE, IS, backend)
        premises = {call[0] for call in backend.calls}
        hypotheses = [call[1] for call in backend.calls]
        assert premises == {EXAMPLE.text}
        assert hypotheses == ["The battery is good.", "The battery is bad."]
        assert all(EXAMPLE.text not in h for h in hypotheses)

    def test_neutral_symmetric_under_evaluation_order(self):
        a = NliLogits(0.9, 0.4, -0.3)
        b = NliLogits(-0.8, 1.1, 0.2)
        for mode in ("probability_argmax", "logit_softmax"):
            assert nli_class_scores(a, b, mode)[2] == pytest.approx(
                nli_class_scores(b, a, mode)[2])

    def test_logit_softmax_arithmetic(self):
        backend = ScriptedNli({"good": (2.0, 0.0, -1.0), "bad": (-1.0, 1.0, 0.5)})
        dist = nli_predict(EXAMPLE, IS, backend, scoring="logit_softmax")
        scores = (2.0, -1.0, 0.5)
        total = sum(math.exp(s) for s in scores)
        assert dist.as_tuple() == pytest.approx(tuple(math.exp(s) / total for s in scores))

    @given(scale=st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=30, deadline=None)
    def test_probability_scaling_leaves_argmax(self, scale):
        scores = (0.31, 0.11, 0.27)
        scaled = tuple(s * scale for s in scores)
        base = tuple(s / sum(scores) for s in scores)
        rescaled = tuple(s / sum(scaled) for s in scaled)
        assert base == pytest.approx(rescaled)

    def test_unknown_scoring_mode(self):
        backend = ScriptedNli({"good": (1, 0, 0), "bad": (0, 0, 1)})
        with pytest.raises(HeadError, match="scoring"):
            nli_predict(EXAMPLE, IS, backend, scoring="argmax")


class TestBaselinePredict:
    def test_softmax_arithmetic(self):
        dist = baseline_predict(EXAMPLE, ScriptedPair((2.0, 0.0, 0.0)), kind="baseline_cls")
        expected = math.exp(2) / (math.exp(2) + 2)
        assert dist.positive == pytest.approx(expected, abs=1e-6)
        assert dist.negative == pytest.approx((1 - expected) / 2, abs=1e-6)
        assert dist.as_tuple() == pytest.approx((0.787, 0.107, 0.107), abs=2e-3)

    def test_readout_must_match(self):
        with pytest.raises(HeadError, match="readout"):
            baseline_predict(EXAMPLE, ScriptedPair((1, 0, 0), readout="cls"), kind="baseline_nsp")

    def test_deterministic(self):
        backend = ScriptedPair((0.3, 0.2, 0.1))
        assert baseline_predict(EXAMPLE, backend, "baseline_cls") == \
            baseline_predict(EXAMPLE, backend, "baseline_cls")


class TestTrainingLoss:
    def test_perfect_prediction(self):
        dist = ClassDistribution(1.0, 0.0, 0.0)
        assert training_loss("nli", EXAMPLE, dist) == 0.0

    def test_uniform(self):
        third = 1.0 / 3.0
        assert training_loss("lm_cloze", EXAMPLE, ClassDistribution(third, third, third)) == \
            pytest.approx(math.log(3))

    def test_zero_probability_aborts(self):
        with pytest.raises(HeadError, match="non-finite"):
            training_loss("nli", EXAMPLE, ClassDistribution(0.0, 0.5, 0.5))

    @given(p=st.floats(min_value=0.01, max_value=0.98))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_gold_probability(self, p):
        rest = (1 - p) / 2
        higher = (1 - (p + 0.01)) / 2
        low = training_loss("nli", EXAMPLE, ClassDistribution(p, rest, rest))
        high = training_loss("nli", EXAMPLE, ClassDistribution(p + 0.01, higher, higher))
        assert high < low


class TestBuildTrainingInstances:
    def test_lm_cloze_instances(self):
        backend = ScriptedMaskedLM({"good": 1.0})
        (instance,) = build_training_instances("lm_cloze", [EXAMPLE], backend, template=IS)
        assert instance.loss_kind == "label_word_cross_entropy"
        assert instance.text == "Great machine overall. The battery is [MASK]."
        assert instance.target == "good"
        assert instance.candidates == ("good", "bad", "ok")

    def test_lm_next_word_records_suffix(self):
        backend = ScriptedCausalLM({"good": 1.0})
        (instance,) = build_training_instances("lm_next_word", [EXAMPLE], backend, template=IS)
        assert instance.text == "Great machine overall. The battery is"
        assert instance.suffix == "."

    def test_nli_instances(self):
        backend = ScriptedNli({"good": (1, 0, 0), "bad": (0, 0, 1)})
        (instance,) = build_training_instances("nli", [EXAMPLE], backend, template=IS)
        assert instance.loss_kind == "three_way_cross_entropy"
        assert instance.text == EXAMPLE.text
        assert instance.hypotheses == ("The battery is good.", "The battery is bad.")
        assert instance.target == "positive"

    def test_baseline_instances(self):
        backend = ScriptedPair((1, 0, 0))
        (instance,) = build_training_instances("baseline_nsp", [EXAMPLE], backend)
        assert instance.aspect == "battery"
        assert instance.hypotheses is None

    def test_predict_dispatch(self):
        nli_backend = ScriptedNli({"good": (1, 0, 0), "bad": (0, 0, 1)})
        assert predict("nli", EXAMPLE, nli_backend, template=IS).argmax() == "positive"
        with pytest.raises(HeadError, match="requires a template"):
            predict("nli", EXAMPLE, nli_backend)
        with pytest.raises(HeadError, match="unknown head"):
            predict("span_extraction", EXAMPLE, nli_backend, template=IS)
