"""Declarative project configuration (JSON) with environment overrides for
paths, plus config fingerprinting for artifact provenance."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Any, Mapping

from .backends.base import BackendDescriptor, BackendRegistry, TrainingSchedule
from .corpus import DOMAINS

DATA_ROOT_ENV = "ATSC_PROMPTS_DATA_ROOT"

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class ConfigError(ValueError):
    """Carries every validation failure, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


def fingerprint(payload: Any) -> str:
    """12-hex-char digest of a canonical JSON rendering of `payload`."""
    if is_dataclass(payload) and not isinstance(payload, type):
        payload = asdict(payload)
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class BackendEntry:
    kind: str  # "bow" | "transformer"
    descriptor: BackendDescriptor
    path: Path | None = None
    options: dict | None = None


@dataclass
class ProjectConfig:
    base_dir: Path
    data: dict[str, dict[str, Path]]      # domain -> split -> examples file
    acsc_test: Path | None
    corpora: dict[str, Path]              # domain -> raw review corpus
    backends: list[BackendEntry]
    seed_list: tuple[int, ...]
    workers: int
    output_dir: Path
    schedule: TrainingSchedule
    grid: dict | None
    cross_domain: dict | None
    acsc: dict | None
    ablation: dict | None
    extra_templates: list[dict]
    raw: dict

    def data_path(self, domain: str, split: str) -> Path:
        try:
            return self.data[domain][split]
        except KeyError:
            raise ConfigError([f"no data path configured for ({domain}, {split})"]) from None


def _resolve(path_value: str, base: Path, data_root: Path | None) -> Path:
    path = Path(path_value)
    if path.is_absolute():
        return path
    if data_root is not None:
        return data_root / path
    return base / path


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> ProjectConfig:
    """Parse and validate a project config file.

    Relative paths resolve against the config file's directory, or against
    the data-root environment variable when it is set (paths only; nothing
    else is overridable from the environment).
    """
    env = env if env is not None else os.environ
    path = Path(path)
    problems: list[str] = []
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None

    base = path.parent
    data_root = Path(env[DATA_ROOT_ENV]) if env.get(DATA_ROOT_ENV) else None

    data: dict[str, dict[str, Path]] = {}
    for domain, splits in (raw.get("data") or {}).items():
        if domain not in DOMAINS:
            problems.append(f"data: unknown domain {domain!r}")
            continue
        data[domain] = {}
        for split, value in splits.items():
            resolved = _resolve(value, base, data_root)
            if not resolved.exists():
                problems.append(f"data.{domain}.{split}: missing file {resolved}")
            data[domain][split] = resolved

    acsc_test = None
    if raw.get("acsc_test"):
        acsc_test = _resolve(raw["acsc_test"], base, data_root)
        if not acsc_test.exists():
            problems.append(f"acsc_test: missing file {acsc_test}")

    corpora: dict[str, Path] = {}
    for domain, value in (raw.get("corpora") or {}).items():
        resolved = _resolve(value, base, data_root)
        if not resolved.exists():
            problems.append(f"corpora.{domain}: missing file {resolved}")
        corpora[domain] = resolved

    backends: list[BackendEntry] = []
    for i, entry in enumerate(raw.get("backends") or []):
        try:
            descriptor = BackendDescriptor(
                family=entry["family"],
                provenance=entry.get("provenance", "generic"),
                domain=entry.get("domain"),
            )
        except (KeyError, ValueError) as exc:
            problems.append(f"backends[{i}]: {exc}")
            continue
        kind = entry.get("kind", "bow")
        if kind not in ("bow", "transformer"):
            problems.append(f"backends[{i}]: unknown kind {kind!r}")
            continue
        model_path = None
        if kind == "transformer":
            location = env.get(entry["path_env"]) if entry.get("path_env") else entry.get("path")
            if not location:
                problems.append(f"backends[{i}]: transformer entries need 'path' or a set 'path_env'")
                continue
            model_path = _resolve(location, base, data_root)
            if not model_path.exists():
                problems.append(f"backends[{i}]: missing model directory {model_path}")
        backends.append(BackendEntry(kind=kind, descriptor=descriptor, path=model_path,
                                     options=entry.get("options") or {}))

    seed_list = tuple(raw.get("seed_list", DEFAULT_SEEDS))
    if not seed_list:
        problems.append("seed_list must be non-empty")

    schedule_raw = raw.get("schedule") or {}
    schedule = TrainingSchedule(
        epochs=schedule_raw.get("epochs", 20),
        batch_size=schedule_raw.get("batch_size", 8),
        learning_rate=schedule_raw.get("learning_rate"),
        max_length=schedule_raw.get("max_length", 256),
    )

    output_dir = _resolve(raw.get("output_dir", "out"), base, None)

    if problems:
        raise ConfigError(problems)

    return ProjectConfig(
        base_dir=base,
        data=data,
        acsc_test=acsc_test,
        corpora=corpora,
        backends=backends,
        seed_list=seed_list,
        workers=int(raw.get("workers", 1)),
        output_dir=output_dir,
        schedule=schedule,
        grid=raw.get("grid"),
        cross_domain=raw.get("cross_domain"),
        acsc=raw.get("acsc"),
        ablation=raw.get("ablation"),
        extra_templates=raw.get("templates") or [],
        raw=raw,
    )


def build_registry(config: ProjectConfig) -> BackendRegistry:
    from .backends import bow

    registry = BackendRegistry()
    bow_classes = {
        "masked_lm": bow.BagOfWordsMaskedLM,
        "causal_lm": bow.BagOfWordsCausalLM,
        "nli": bow.BagOfWordsNli,
        "pair_classifier": bow.BagOfWordsPairClassifier,
    }
    for entry in config.backends:
        descriptor = entry.descriptor
        options = dict(entry.options or {})
        if entry.kind == "bow":
            cls = bow_classes[descriptor.family]

            def loader(cls=cls, descriptor=descriptor, options=options):
                return cls(descriptor=descriptor, **options)
        else:
            from .backends import hf

            loaders = {
                "masked_lm": hf.load_masked_lm,
                "causal_lm": hf.load_causal_lm,
                "nli": hf.load_nli,
                "pair_classifier": hf.load_pair_classifier,
            }
            fn = loaders[descriptor.family]

            def loader(fn=fn, path=entry.path, descriptor=descriptor, options=options):
                return fn(path, descriptor=descriptor, **options)
        registry.register(descriptor, loader)
    return registry
