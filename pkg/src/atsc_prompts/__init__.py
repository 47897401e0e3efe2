"""Aspect-target sentiment classification with cloze prompts and NLI
entailment: zero-shot, few-shot, and fully supervised."""

__version__ = "0.1.0"
