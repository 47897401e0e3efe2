from .base import (
    Backend,
    BackendDescriptor,
    BackendError,
    BackendRegistry,
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
    UnsupportedCapability,
    instance_from_record,
    instance_to_record,
    resolve_scoring_words,
)

__all__ = [
    "Backend", "BackendDescriptor", "BackendError", "BackendRegistry",
    "FitResult", "LOSS_CAUSAL_LM", "LOSS_LABEL_WORD", "LOSS_MASKED_LM",
    "LOSS_THREE_WAY", "NliLogits", "PairLogits", "TokenDistribution",
    "TrainingInstance", "TrainingSchedule", "UnsupportedCapability",
    "instance_from_record", "instance_to_record", "resolve_scoring_words",
]
