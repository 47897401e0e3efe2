import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atsc_prompts.prompting import (
    BUILTIN_TEMPLATES,
    DEFAULT_VERBALIZER,
    PromptError,
    PromptTemplate,
    Verbalizer,
    get_template,
    load_templates,
    render_cloze,
    render_hypotheses,
    render_next_word,
)


class TestTemplateSnapshots:
    def test_shipped_patterns_verbatim(self):
        assert BUILTIN_TEMPLATES["felt_was"].pattern == "I felt the {aspect} was [MASK]."
        assert BUILTIN_TEMPLATES["made_me_feel"].pattern == "The {aspect} made me feel [MASK]."
        assert BUILTIN_TEMPLATES["is"].pattern == "The {aspect} is [MASK]."

    def test_plural_variants(self):
        assert BUILTIN_TEMPLATES["felt_was"].plural_pattern == "I felt the {aspect} were [MASK]."
        assert BUILTIN_TEMPLATES["is"].plural_pattern == "The {aspect} are [MASK]."
        assert BUILTIN_TEMPLATES["made_me_feel"].plural_pattern == \
            BUILTIN_TEMPLATES["made_me_feel"].pattern

    def test_validation_rejects_bad_patterns(self):
        with pytest.raises(PromptError):
            PromptTemplate("x", "No aspect slot [MASK].")
        with pytest.raises(PromptError):
            PromptTemplate("x", "The {aspect} has no mask.")
        with pytest.raises(PromptError):
            PromptTemplate("x", "The {aspect} and {aspect} twice [MASK].")
        with pytest.raises(PromptError):
            PromptTemplate("x", "The {aspect} is [MASK] or [MASK].")

    def test_load_templates_registers_extras(self):
        templates = load_templates([{"id": "overall", "pattern": "Overall the {aspect} is [MASK]."}])
        assert set(BUILTIN_TEMPLATES) <= set(templates)
        assert get_template("overall", extra=templates).pattern.startswith("Overall")
        with pytest.raises(PromptError, match="unknown template"):
            get_template("missing")


class TestRenderCloze:
    def test_is_template(self):
        rendered = render_cloze(BUILTIN_TEMPLATES["is"], "battery life", "Great machine.")
        assert rendered.full_text == "Great machine. The battery life is [MASK]."
        assert rendered.mode == "cloze"
        assert rendered.full_text[rendered.mask_position:rendered.mask_position + 6] == "[MASK]"

    def test_felt_was_no_agreement(self):
        rendered = render_cloze(BUILTIN_TEMPLATES["felt_was"], "fajitas", "Tasty stuff.")
        assert rendered.full_text == "Tasty stuff. I felt the fajitas was [MASK]."

    def test_made_me_feel(self):
        rendered = render_cloze(BUILTIN_TEMPLATES["made_me_feel"], "service", "Fine.")
        assert rendered.full_text == "Fine. The service made me feel [MASK]."

    def test_custom_mask_token(self):
        rendered = render_cloze(BUILTIN_TEMPLATES["is"], "screen", "Nice.", mask_token="<mask>")
        assert rendered.full_text == "Nice. The screen is <mask>."
        assert rendered.full_text.count("<mask>") == 1

    def test_casing_preserved(self):
        rendered = render_cloze(BUILTIN_TEMPLATES["is"], "Windows 8", "Meh.")
        assert "The Windows 8 is" in rendered.full_text

    def test_rejects_mask_in_aspect(self):
        with pytest.raises(PromptError, match="mask token"):
            render_cloze(BUILTIN_TEMPLATES["is"], "thing [MASK]", "Review.")

    def test_rejects_empty_aspect(self):
        with pytest.raises(PromptError, match="non-empty"):
            render_cloze(BUILTIN_TEMPLATES["is"], "  ", "Review.")


class TestRenderNextWord:
    def test_truncates_at_slot(self):
        rendered = render_next_word(BUILTIN_TEMPLATES["is"], "screen", "Nice.")
        assert rendered.full_text == "Nice. The screen is"
        assert rendered.suffix == "."
        assert rendered.mask_position == len(rendered.full_text)
        assert rendered.mode == "next_word"

    def test_felt_was(self):
        rendered = render_next_word(BUILTIN_TEMPLATES["felt_was"], "keyboard", "Solid.")
        assert rendered.full_text == "Solid. I felt the keyboard was"
        assert rendered.suffix == "."

    def test_mid_pattern_slot_preserves_suffix(self):
        template = PromptTemplate("mid", "Overall [MASK] describes the {aspect}.")
        rendered = render_next_word(template, "battery", "Hmm.")
        assert rendered.full_text == "Hmm. Overall"
        assert rendered.suffix == " describes the battery."


class TestRenderHypotheses:
    def test_is_template(self):
        pair = render_hypotheses(BUILTIN_TEMPLATES["is"], "service")
        assert pair.positive_hypothesis == "The service is good."
        assert pair.negative_hypothesis == "The service is bad."

    def test_felt_was(self):
        pair = render_hypotheses(BUILTIN_TEMPLATES["felt_was"], "wine list")
        assert pair.positive_hypothesis == "I felt the wine list was good."
        assert pair.negative_hypothesis == "I felt the wine list was bad."

    def test_category_substituted_verbatim(self):
        pair = render_hypotheses(BUILTIN_TEMPLATES["is"], "anecdotes/miscellaneous")
        assert pair.positive_hypothesis == "The anecdotes/miscellaneous is good."

    def test_plural_agreement(self):
        pair = render_hypotheses(BUILTIN_TEMPLATES["is"], "things", plural=True)
        assert pair.positive_hypothesis == "The things are good."
        assert pair.negative_hypothesis == "The things are bad."
        pair = render_hypotheses(BUILTIN_TEMPLATES["felt_was"], "things", plural=True)
        assert pair.positive_hypothesis == "I felt the things were good."

    def test_differ_in_exactly_one_token(self):
        for template in BUILTIN_TEMPLATES.values():
            pair = render_hypotheses(template, "battery life")
            pos, neg = pair.positive_hypothesis.split(), pair.negative_hypothesis.split()
            assert len(pos) == len(neg)
            assert sum(a != b for a, b in zip(pos, neg)) == 1

    def test_neutral_word_never_in_hypotheses(self):
        pair = render_hypotheses(BUILTIN_TEMPLATES["is"], "screen")
        assert "ok" not in pair.positive_hypothesis.split()
        assert "ok" not in pair.negative_hypothesis.split()


class TestVerbalizer:
    def test_mapping(self):
        assert DEFAULT_VERBALIZER.verbalize("positive") == "good"
        assert DEFAULT_VERBALIZER.verbalize("neutral") == "ok"
        assert DEFAULT_VERBALIZER.verbalize("negative") == "bad"
        assert DEFAULT_VERBALIZER.unverbalize("ok") == "neutral"

    def test_round_trip(self):
        for polarity in ("positive", "negative", "neutral"):
            assert DEFAULT_VERBALIZER.unverbalize(DEFAULT_VERBALIZER.verbalize(polarity)) == polarity
        for word in DEFAULT_VERBALIZER.label_words:
            assert DEFAULT_VERBALIZER.verbalize(DEFAULT_VERBALIZER.unverbalize(word)) == word

    def test_unknown_inputs(self):
        with pytest.raises(PromptError):
            DEFAULT_VERBALIZER.verbalize("conflict")
        with pytest.raises(PromptError):
            DEFAULT_VERBALIZER.unverbalize("fine")

    def test_must_be_bijective(self):
        with pytest.raises(PromptError):
            Verbalizer({"positive": "good", "neutral": "good", "negative": "bad"})
        with pytest.raises(PromptError):
            Verbalizer({"positive": "good", "negative": "bad"})


# Aspects from letters no template pattern contains, so substring counting
# is exact; reviews are unconstrained.
safe_aspects = st.text(alphabet="qxzj", min_size=2, max_size=8)


class TestProperties:
    @given(aspect=safe_aspects, review=st.text(min_size=0, max_size=60),
           template_id=st.sampled_from(sorted(BUILTIN_TEMPLATES)))
    @settings(max_examples=60, deadline=None)
    def test_aspect_appears_exactly_once_more(self, aspect, review, template_id):
        rendered = render_cloze(BUILTIN_TEMPLATES[template_id], aspect, review)
        assert rendered.full_text.count(aspect) == review.count(aspect) + 1

    @given(aspect=safe_aspects, review=st.text(min_size=1, max_size=60),
           template_id=st.sampled_from(sorted(BUILTIN_TEMPLATES)))
    @settings(max_examples=30, deadline=None)
    def test_rendering_deterministic(self, aspect, review, template_id):
        template = BUILTIN_TEMPLATES[template_id]
        assert render_cloze(template, aspect, review) == render_cloze(template, aspect, review)
        assert render_hypotheses(template, aspect) == render_hypotheses(template, aspect)
