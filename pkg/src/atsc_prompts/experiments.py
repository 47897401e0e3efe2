"""Experimental protocols: the size grid over seeds and templates,
cross-domain transfer, category-aspect transfer, and the aspect ablation."""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .backends.base import Backend, BackendDescriptor, BackendRegistry, TrainingSchedule
from .config import fingerprint
from .corpus import DOMAINS, FewShotSpec, LabeledExample, sample_few_shot
from .heads import BASELINE_HEADS, FAMILY_FOR_HEAD, HEAD_KINDS, build_training_instances, predict
from .metrics import EvalReport, score
from .prompting import PromptTemplate, get_template

DEFAULT_EPOCHS = 20


class RunError(RuntimeError):
    """A run failure with its configuration attached."""

    def __init__(self, config: "RunConfig", cause: BaseException):
        self.config = config
        self.cause = cause
        super().__init__(f"run {config.fingerprint()} ({config.head}, size={config.few_shot.size}, "
                         f"seed={config.few_shot.seed}, template={config.template_id}): {cause}")


@dataclass(frozen=True)
class RunConfig:
    head: str
    backend: BackendDescriptor
    train_domain: str
    test_domain: str
    few_shot: FewShotSpec
    template_id: str | None = None
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = 8
    learning_rate: float | None = None
    max_length: int = 256
    nli_scoring: str | None = None  # None: probability_argmax zero-shot, logit_softmax trained

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.train_domain not in DOMAINS or self.test_domain not in DOMAINS:
            raise ValueError(f"domains must be in {DOMAINS}")
        if self.head in BASELINE_HEADS:
            if self.few_shot.size == 0:
                raise ValueError("baseline undefined without training (no zero-shot baselines)")
            if self.template_id is not None:
                raise ValueError("baseline heads take no template")
        elif self.template_id is None:
            raise ValueError(f"{self.head} requires a template_id")

    def schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.few_shot.seed,
            max_length=self.max_length,
        )

    def scoring_mode(self) -> str:
        if self.nli_scoring is not None:
            return self.nli_scoring
        return "probability_argmax" if self.few_shot.size == 0 else "logit_softmax"

    def fingerprint(self) -> str:
        return fingerprint(self)


@dataclass(frozen=True)
class PredictionRecord:
    source_id: str
    gold: str
    distribution: tuple[float, float, float]
    predicted: str


@dataclass
class RunResult:
    config: RunConfig
    report: EvalReport
    final_train_loss: float | None
    min_train_loss: float | None
    predictions: list[PredictionRecord]
    protocol: str = "main"
    backend: Backend | None = None  # kept for transfer evaluation, never serialized

    def row(self) -> dict:
        return {
            "head": self.config.head,
            "train_domain": self.config.train_domain,
            "test_domain": self.config.test_domain,
            "size": self.config.few_shot.size,
            "seed": self.config.few_shot.seed,
            "template_id": self.config.template_id,
            "accuracy": self.report.accuracy,
            "macro_f1": self.report.macro_f1,
            "per_class_f1": dict(self.report.per_class_f1),
            "n": self.report.n,
            "protocol": self.protocol,
        }


@dataclass
class DataStore:
    """Labeled example splits keyed by (domain, split)."""

    splits: Mapping[tuple[str, str], Sequence[LabeledExample]]

    def get(self, domain: str, split: str) -> list[LabeledExample]:
        try:
            return list(self.splits[(domain, split)])
        except KeyError:
            available = sorted(self.splits)
            raise ValueError(f"no data for ({domain}, {split}); available: {available}") from None


def _evaluate(backend: Backend, config: RunConfig, examples: Sequence[LabeledExample],
              template: PromptTemplate | None, aliases: Mapping[str, str] | None = None,
              aspect_override: str | None = None, plural: bool = False,
              ) -> tuple[EvalReport, list[PredictionRecord]]:
    predictions = []
    scoring = config.scoring_mode()
    for example in examples:
        override = aspect_override
        if override is None and aliases:
            override = aliases.get(example.aspect)
        dist = predict(config.head, example, backend, template=template,
                       nli_scoring=scoring, aspect_override=override, plural=plural)
        predictions.append(PredictionRecord(
            source_id=example.source_id, gold=example.polarity,
            distribution=dist.as_tuple(), predicted=dist.argmax(),
        ))
    report = score([p.gold for p in predictions], [p.predicted for p in predictions],
                   fingerprint=config.fingerprint())
    return report, predictions


def run_one(config: RunConfig, data: DataStore, registry: BackendRegistry,
            templates: Mapping[str, PromptTemplate] | None = None) -> RunResult:
    """Sample, optionally fine-tune, and evaluate on the full test split.

    Zero-shot runs never call fit. The run seed determines both the
    few-shot subset and the training data order.
    """
    try:
        train_pool = data.get(config.train_domain, "train")
        test = data.get(config.test_domain, "test")
        subset = sample_few_shot(train_pool, config.few_shot)
        backend = registry.load(config.backend)
        if config.head in BASELINE_HEADS and hasattr(backend, "set_readout"):
            backend.set_readout(config.head.removeprefix("baseline_"))
        template = get_template(config.template_id, extra=templates) if config.template_id else None
        final_loss = min_loss = None
        if subset:
            instances = build_training_instances(config.head, subset, backend, template=template)
            fit_result = backend.fit(instances, config.schedule())
            final_loss, min_loss = fit_result.final_loss, fit_result.min_loss
        report, predictions = _evaluate(backend, config, test, template)
        return RunResult(config=config, report=report, final_train_loss=final_loss,
                         min_train_loss=min_loss, predictions=predictions, backend=backend)
    except RunError:
        raise
    except Exception as exc:
        raise RunError(config, exc) from exc


@dataclass
class CellSummary:
    head: str
    domain: str
    size: int | str
    accuracy: float
    macro_f1: float
    runs: int


@dataclass
class GridResult:
    results: list[RunResult] = field(default_factory=list)
    failures: list[RunError] = field(default_factory=list)

    def cell(self, head: str, domain: str, size: int | str) -> CellSummary:
        rows = [r for r in self.results
                if r.config.head == head and r.config.test_domain == domain
                and r.config.few_shot.size == size]
        if not rows:
            raise ValueError(f"no runs for cell ({head}, {domain}, {size})")
        return CellSummary(
            head=head, domain=domain, size=size,
            accuracy=_mean_over_seeds_then_templates(rows, "accuracy"),
            macro_f1=_mean_over_seeds_then_templates(rows, "macro_f1"),
            runs=len(rows),
        )


def _mean_over_seeds_then_templates(results: Sequence[RunResult], metric: str) -> float:
    by_template: dict[str | None, list[float]] = {}
    for result in results:
        value = getattr(result.report, metric)
        by_template.setdefault(result.config.template_id, []).append(value)
    return statistics.fmean(statistics.fmean(vals) for vals in by_template.values())


def backend_descriptor_for(head: str, provenance: str = "generic",
                           domain: str | None = None) -> BackendDescriptor:
    """The backend a head trains/scores against, per grid cell."""
    return BackendDescriptor(
        family=FAMILY_FOR_HEAD[head],
        provenance=provenance,
        domain=domain if provenance == "domain_adapted" else None,
    )


def grid_configs(
    heads: Sequence[str],
    template_ids: Sequence[str],
    sizes: Sequence[int | str],
    seeds: Sequence[int],
    domains: Sequence[str],
    provenance: str = "generic",
    **config_kwargs,
) -> list[RunConfig]:
    """The Cartesian product of grid cells, expanded to run configs.

    Prompt heads get templates x seeds per cell; baselines get seeds only.
    Zero-shot cells collapse to one run per template (no randomness enters)
    and skip baselines entirely.
    """
    configs = []
    for domain in domains:
        for head in heads:
            backend = backend_descriptor_for(head, provenance, domain)
            for size in sizes:
                if head in BASELINE_HEADS:
                    if size == 0:
                        continue  # baselines are undefined without training
                    for seed in seeds:
                        configs.append(RunConfig(
                            head=head, backend=backend,
                            train_domain=domain, test_domain=domain,
                            few_shot=FewShotSpec(size=size, seed=seed),
                            template_id=None, **config_kwargs))
                    continue
                run_seeds = seeds if size != 0 else seeds[:1]
                for template_id in template_ids:
                    for seed in run_seeds:
                        configs.append(RunConfig(
                            head=head, backend=backend,
                            train_domain=domain, test_domain=domain,
                            few_shot=FewShotSpec(size=size, seed=seed),
                            template_id=template_id, **config_kwargs))
    return configs


def run_grid(configs: Sequence[RunConfig], data: DataStore, registry: BackendRegistry,
             workers: int = 1, templates: Mapping[str, PromptTemplate] | None = None) -> GridResult:
    """Execute runs, recording partial failures without stopping the grid."""
    grid = GridResult()

    def _execute(config: RunConfig) -> RunResult | RunError:
        try:
            return run_one(config, data, registry, templates=templates)
        except RunError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_execute, configs))
    else:
        outcomes = [_execute(c) for c in configs]
    for outcome in outcomes:
        if isinstance(outcome, RunError):
            grid.failures.append(outcome)
        else:
            outcome.backend = None  # grid results only carry records
            grid.results.append(outcome)
    return grid


def cross_domain_config(base: RunConfig, train_domain: str, test_domain: str,
                        follow_train_domain: bool = True) -> RunConfig:
    """Derive a transfer config; domain-adapted backends follow the train
    domain's pretraining by default (switchable to the test domain)."""
    backend = base.backend
    if backend.provenance == "domain_adapted":
        backend = replace(backend, domain=train_domain if follow_train_domain else test_domain)
    return replace(base, train_domain=train_domain, test_domain=test_domain, backend=backend)


def cross_domain(config: RunConfig, data: DataStore, registry: BackendRegistry) -> RunResult:
    """Train on one domain, test on the other; in-domain configs reduce to
    a plain run."""
    result = run_one(config, data, registry)
    if config.train_domain != config.test_domain:
        result.protocol = "cross_domain"
    return result


def acsc_transfer(trained: RunResult, acsc_test: Sequence[LabeledExample],
                  aliases: Mapping[str, str] | None = None,
                  templates: Mapping[str, PromptTemplate] | None = None) -> RunResult:
    """Evaluate an already-trained (or zero-shot) run on category examples,
    with no extra training; categories substitute into prompts like terms."""
    if trained.backend is None:
        raise ValueError("acsc_transfer needs the run's backend (run with run_one)")
    config = trained.config
    template = get_template(config.template_id, extra=templates) if config.template_id else None
    report, predictions = _evaluate(trained.backend, config, list(acsc_test), template,
                                    aliases=aliases)
    return RunResult(config=config, report=report,
                     final_train_loss=trained.final_train_loss,
                     min_train_loss=trained.min_train_loss,
                     predictions=predictions, protocol="acsc", backend=trained.backend)


@dataclass
class AblationResult:
    original: EvalReport
    replaced: EvalReport
    replacement: str

    @property
    def delta_accuracy(self) -> float:
        return self.replaced.accuracy - self.original.accuracy

    @property
    def delta_macro_f1(self) -> float:
        return self.replaced.macro_f1 - self.original.macro_f1


def aspect_ablation(trained: RunResult, test: Sequence[LabeledExample],
                    replacement: str = "things", plural: bool = True,
                    templates: Mapping[str, PromptTemplate] | None = None) -> AblationResult:
    """Re-evaluate with every aspect replaced by a constant in the
    hypotheses/prompts only (premises stay intact), against the original.

    The replacement uses the template's agreement-adjusted plural pattern
    unless plural=False.
    """
    if trained.backend is None:
        raise ValueError("aspect_ablation needs the run's backend (run with run_one)")
    config = trained.config
    template = get_template(config.template_id, extra=templates) if config.template_id else None
    original, _ = _evaluate(trained.backend, config, list(test), template)
    replaced, _ = _evaluate(trained.backend, config, list(test), template,
                            aspect_override=replacement, plural=plural)
    return AblationResult(original=original, replaced=replaced, replacement=replacement)


# -- result persistence -----------------------------------------------------

def run_record(result: RunResult) -> dict:
    from dataclasses import asdict

    return {
        "fingerprint": result.config.fingerprint(),
        "config": asdict(result.config),
        "protocol": result.protocol,
        "report": result.report.as_dict(),
        "final_train_loss": result.final_train_loss,
        "min_train_loss": result.min_train_loss,
        "predictions": [asdict(p) for p in result.predictions],
    }


def save_run(result: RunResult, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = f"run_{result.protocol}_{result.config.fingerprint()}.json"
    out = directory / name
    out.write_text(json.dumps(run_record(result), indent=2, ensure_ascii=False) + "\n",
                   encoding="utf-8")
    return out


def load_run_rows(directory: str | Path) -> list[dict]:
    """Rows for tabulation from a directory of run record files."""
    rows = []
    for record_file in sorted(Path(directory).glob("run_*.json")):
        record = json.loads(record_file.read_text(encoding="utf-8"))
        config = record["config"]
        report = record["report"]
        rows.append({
            "head": config["head"],
            "train_domain": config["train_domain"],
            "test_domain": config["test_domain"],
            "size": config["few_shot"]["size"],
            "seed": config["few_shot"]["seed"],
            "template_id": config["template_id"],
            "accuracy": report["accuracy"],
            "macro_f1": report["macro_f1"],
            "per_class_f1": report["per_class_f1"],
            "n": report["n"],
            "protocol": record.get("protocol", "main"),
        })
    return rows
