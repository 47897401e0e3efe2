import json
import math
import random

import pytest

from atsc_prompts.backends.base import instance_to_record
from atsc_prompts.pretraining import (
    CANDIDATE_TAGS,
    MaskingPlan,
    TaggingError,
    apply_masking,
    build_mlm_instances,
    clm_batches,
    heuristic_pos_tags,
    select_candidates,
    word_tokenize,
)


class TestWordTokenize:
    def test_spans_index_the_sentence(self):
        sentence = "The screen, frankly, isn't great."
        for token in word_tokenize(sentence):
            assert sentence[token.start:token.end] == token.text

    def test_punctuation_separated(self):
        texts = [t.text for t in word_tokenize("Good, cheap!")]
        assert texts == ["Good", ",", "cheap", "!"]


class TestHeuristicTagger:
    def test_simple_sentence(self):
        tags = heuristic_pos_tags(["The", "screen", "is", "great"])
        assert tags == ["DET", "NOUN", "VERB", "ADJ"]

    def test_proper_noun_mid_sentence(self):
        tags = heuristic_pos_tags(["I", "met", "Mike", "yesterday"])
        assert tags[2] == "PROPN"

    def test_punctuation_and_numbers(self):
        tags = heuristic_pos_tags(["8", "!", "."])
        assert tags == ["NUM", "PUNCT", "PUNCT"]


class TestSelectCandidates:
    def test_by_tag_definition(self):
        sentence = "The screen is great"
        positions = select_candidates(sentence, ["DET", "NOUN", "VERB", "ADJ"])
        assert positions == [1, 3]

    def test_no_candidates(self):
        assert select_candidates("in and out", ["ADP", "CONJ", "ADP"]) == []

    def test_misaligned_tags_error_names_span(self):
        with pytest.raises(TaggingError, match=r"2 tags for 4 tokens"):
            select_candidates("The screen is great", ["DET", "NOUN"])


class TestApplyMasking:
    def test_deterministic_per_seed(self):
        tokens = ["the"] + [f"word{i}" for i in range(20)]
        candidates = list(range(1, 21))
        first = apply_masking(tokens, candidates, mask_rate=0.3, seed=5)
        second = apply_masking(tokens, candidates, mask_rate=0.3, seed=5)
        assert first == second
        different = apply_masking(tokens, candidates, mask_rate=0.3, seed=6)
        assert first.masked_positions != different.masked_positions

    def test_rate_one_masks_all_candidates(self):
        plan = apply_masking(["a", "b", "c"], [0, 2], mask_rate=1.0, seed=0)
        assert plan.masked_positions == (0, 2)

    def test_empty_candidates(self):
        plan = apply_masking(["a", "b"], [], mask_rate=0.15, seed=0)
        assert plan.masked_positions == ()

    def test_at_least_one_when_candidates_exist(self):
        plan = apply_masking(["a", "b", "c"], [1], mask_rate=0.15, seed=0)
        assert plan.masked_positions == (1,)

    def test_count_rule(self):
        rng = random.Random(0)
        for _ in range(200):
            n_tokens = rng.randint(1, 40)
            tokens = [f"w{i}" for i in range(n_tokens)]
            candidates = sorted(rng.sample(range(n_tokens), rng.randint(0, n_tokens)))
            plan = apply_masking(tokens, candidates, mask_rate=0.15, seed=rng.randint(0, 99))
            if candidates:
                expected = max(1, math.floor(0.15 * len(candidates)))
                assert len(plan.masked_positions) == expected
            else:
                assert not plan.masked_positions

    def test_never_masks_outside_candidates_1000_sentences(self):
        rng = random.Random(42)
        for _ in range(1000):
            n = rng.randint(1, 30)
            tokens = [f"w{i}" for i in range(n)]
            candidates = sorted(rng.sample(range(n), rng.randint(0, n)))
            plan = apply_masking(tokens, candidates, mask_rate=rng.choice([0.15, 0.3, 1.0]),
                                 seed=rng.randint(0, 10**6))
            assert set(plan.masked_positions) <= set(candidates)

    def test_plan_validates_subset(self):
        with pytest.raises(ValueError, match="outside the candidate set"):
            MaskingPlan(tokens=("a", "b"), candidate_positions=(0,),
                        masked_positions=(1,), mask_rate=0.15)

    def test_invalid_rate_and_positions(self):
        with pytest.raises(ValueError, match="mask_rate"):
            apply_masking(["a"], [0], mask_rate=1.5)
        with pytest.raises(ValueError, match="out of range"):
            apply_masking(["a"], [3])


class TestBuildMlmInstances:
    def test_spans_cover_masked_words(self):
        sentences = ["The screen is great.", "We went there."]
        instances = build_mlm_instances(sentences, mask_rate=1.0, seed=0)
        assert len(instances) == 2
        first = instances[0]
        masked_words = {first.text[s:e] for s, e in first.masked_spans}
        assert masked_words == {"screen", "great"}

    def test_taggerless_sentences_emitted_without_spans(self):
        instances = build_mlm_instances(["in and out of it"], mask_rate=0.15, seed=0)
        assert len(instances) == 1
        assert instances[0].masked_spans == ()

    def test_byte_identical_per_seed(self):
        sentences = [f"The part{i} is great and the case{i} looks nice." for i in range(20)]
        first = json.dumps([instance_to_record(i) for i in
                            build_mlm_instances(sentences, seed=3)])
        second = json.dumps([instance_to_record(i) for i in
                             build_mlm_instances(sentences, seed=3)])
        assert first == second

    def test_custom_tagger(self):
        def noun_everything(tokens):
            return ["NOUN"] * len(tokens)

        instances = build_mlm_instances(["in and out"], mask_rate=1.0, seed=0,
                                        tagger=noun_everything)
        assert len(instances[0].masked_spans) == 3


class TestClmBatches:
    def test_length_preserving(self):
        sentences = [f"word{i} word{i} word{i}" for i in range(10)]
        instances = clm_batches(sentences, window=7, seed=0)
        total_in = sum(len(s.split()) for s in sentences)
        total_out = sum(len(i.text.split()) for i in instances)
        assert total_in == total_out

    def test_last_window_shorter(self):
        instances = clm_batches(["a b c d e"], window=3, seed=0)
        lengths = sorted(len(i.text.split()) for i in instances)
        assert lengths == [2, 3]

    def test_order_deterministic_per_seed(self):
        sentences = [f"w{i} " * 5 for i in range(12)]
        first = [i.text for i in clm_batches(sentences, window=4, seed=1)]
        second = [i.text for i in clm_batches(sentences, window=4, seed=1)]
        third = [i.text for i in clm_batches(sentences, window=4, seed=2)]
        assert first == second
        assert sorted(first) == sorted(third)
        assert first != third

    def test_window_validation(self):
        with pytest.raises(ValueError, match="window"):
            clm_batches(["a b"], window=1)

    def test_loss_kind(self):
        instances = clm_batches(["a b c"], window=2)
        assert all(i.loss_kind == "causal_lm" for i in instances)
