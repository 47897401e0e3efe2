"""Command-line entry point: ingest, corpus, pretrain, run, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .config import ConfigError, build_registry, fingerprint, load_config
from .metrics import tabulate
from .prompting import load_templates


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def cmd_ingest(args) -> int:
    in_path = Path(args.in_path)
    if not in_path.exists():
        return _fail(f"input file not found: {in_path}")
    try:
        raw = corpus_mod.parse_semeval(in_path.read_bytes(), kind=args.task)
        examples = corpus_mod.preprocess(raw, domain=args.domain)
    except (corpus_mod.ParseError, ValueError) as exc:
        return _fail(str(exc))
    fp = fingerprint({"command": "ingest", "task": args.task, "domain": args.domain,
                      "input": str(in_path)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_examples(examples, out, fingerprint=fp)
    counts = corpus_mod.class_counts(examples)
    print(f"ingest: {len(examples)} examples ({counts['positive']} positive, "
          f"{counts['negative']} negative, {counts['neutral']} neutral) -> {out} [{fp}]")
    return 0


def cmd_corpus(args) -> int:
    source = Path(args.source)
    if not source.exists():
        return _fail(f"source file not found: {source}")
    fp = fingerprint({"command": "corpus", "domain": args.domain, "source": str(source),
                      "limit": args.limit})
    stats = corpus_mod.StreamStats()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    with open(source, encoding="utf-8") as lines, open(tmp, "w", encoding="utf-8") as sink:
        for sentence in corpus_mod.prepare_pretrain_corpus(
                lines, domain=args.domain, limit=args.limit, stats=stats):
            sink.write(sentence.text + "\n")
    tmp.replace(out)
    meta = {"fingerprint": fp, "consumed": stats.consumed, "skipped": stats.skipped,
            "matched": stats.matched, "sentences": stats.sentences}
    out.with_suffix(out.suffix + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"corpus: {stats.sentences} sentences from {stats.matched}/{stats.consumed} reviews "
          f"({stats.skipped} unreadable skipped) -> {out} [{fp}]")
    return 0


def cmd_pretrain(args) -> int:
    from .backends.base import BackendDescriptor, BackendError, TrainingSchedule, instance_to_record
    from .pretraining import build_mlm_instances, clm_batches

    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        return _fail(f"corpus file not found: {corpus_path}")
    sentences = [line.strip() for line in corpus_path.read_text(encoding="utf-8").splitlines()
                 if line.strip()]
    if args.objective == "masked":
        instances = build_mlm_instances(sentences, mask_rate=args.mask_rate, seed=args.seed)
        family = "masked_lm"
    else:
        instances = clm_batches(sentences, window=args.window, seed=args.seed)
        family = "causal_lm"
    fp = fingerprint({"command": "pretrain", "domain": args.domain, "corpus": str(corpus_path),
                      "objective": args.objective, "steps": args.steps, "seed": args.seed})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    instances_file = out_dir / "instances.jsonl"
    with open(instances_file, "w", encoding="utf-8") as sink:
        sink.write(json.dumps({"kind": "header", "fingerprint": fp}) + "\n")
        for instance in instances:
            sink.write(json.dumps(instance_to_record(instance), ensure_ascii=False) + "\n")
    summary = f"pretrain: {len(instances)} {family} instances -> {instances_file} [{fp}]"

    if args.config:
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            return _fail(str(exc))
        registry = build_registry(config)
        descriptor = BackendDescriptor(family=family, provenance="domain_adapted",
                                       domain=args.domain)
        try:
            backend = registry.load(descriptor)
        except BackendError:
            try:
                descriptor = BackendDescriptor(family=family)
                backend = registry.load(descriptor)
            except BackendError as exc:
                return _fail(f"no {family} backend registered: {exc}")
        schedule = TrainingSchedule(epochs=1, batch_size=config.schedule.batch_size,
                                    learning_rate=config.schedule.learning_rate,
                                    seed=args.seed, max_length=config.schedule.max_length)
        budget = args.steps * schedule.batch_size
        fitted = backend.fit(instances[:budget], schedule)
        if hasattr(backend, "save"):
            backend.save(out_dir / "model")
        summary += f"; trained {min(len(instances), budget)} instances, final loss {fitted.final_loss:.4f}"
    print(summary)
    return 0


def _load_data(config) -> "DataStore":
    from .experiments import DataStore

    splits = {}
    for domain, files in config.data.items():
        for split, path in files.items():
            splits[(domain, split)] = corpus_mod.read_examples(path)
    return DataStore(splits=splits)


def cmd_run(args) -> int:
    from . import experiments as exp
    from .corpus import FewShotSpec

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    out_dir = Path(args.out) if args.out else config.output_dir
    runs_dir = out_dir / "runs"
    seed_list = tuple(args.seed_list) if args.seed_list else config.seed_list
    workers = args.workers if args.workers else config.workers
    templates = load_templates(config.extra_templates)
    registry = build_registry(config)
    data = _load_data(config)
    schedule = config.schedule
    common = dict(epochs=schedule.epochs, batch_size=schedule.batch_size,
                  learning_rate=schedule.learning_rate, max_length=schedule.max_length)

    written, failures = 0, []
    if config.grid:
        grid = config.grid
        configs = exp.grid_configs(
            heads=grid["heads"],
            template_ids=grid.get("templates", list(templates)),
            sizes=grid.get("sizes", [0]),
            seeds=grid.get("seeds", seed_list),
            domains=grid.get("domains", []),
            provenance=grid.get("provenance", "generic"),
            **common,
        )
        outcome = exp.run_grid(configs, data, registry, workers=workers, templates=templates)
        for result in outcome.results:
            exp.save_run(result, runs_dir)
            written += 1
        failures.extend(outcome.failures)

    if config.cross_domain:
        section = config.cross_domain
        for train_domain, test_domain in section.get("pairs", []):
            for head in section.get("heads", []):
                for size in section.get("sizes", [16]):
                    for template_id in (section.get("templates", list(templates))
                                        if head not in ("baseline_cls", "baseline_nsp") else [None]):
                        for seed in section.get("seeds", seed_list):
                            try:
                                base = exp.RunConfig(
                                    head=head,
                                    backend=exp.backend_descriptor_for(
                                        head, section.get("provenance", "generic"), train_domain),
                                    train_domain=train_domain, test_domain=train_domain,
                                    few_shot=FewShotSpec(size=size, seed=seed),
                                    template_id=template_id, **common)
                                cfg = exp.cross_domain_config(base, train_domain, test_domain)
                                result = exp.cross_domain(cfg, data, registry)
                                exp.save_run(result, runs_dir)
                                written += 1
                            except (exp.RunError, ValueError) as exc:
                                failures.append(exc)

    if config.acsc:
        section = config.acsc
        if config.acsc_test is None:
            return _fail("acsc section present but no acsc_test file configured")
        acsc_examples = corpus_mod.read_examples(config.acsc_test)
        aliases = section.get("aliases") or {}
        for head in section.get("heads", []):
            for size in section.get("sizes", [16]):
                for template_id in (section.get("templates", list(templates))
                                    if head not in ("baseline_cls", "baseline_nsp") else [None]):
                    for seed in section.get("seeds", seed_list) if size != 0 else [seed_list[0]]:
                        try:
                            cfg = exp.RunConfig(
                                head=head,
                                backend=exp.backend_descriptor_for(
                                    head, section.get("provenance", "generic"),
                                    section.get("train_domain", "restaurants")),
                                train_domain=section.get("train_domain", "restaurants"),
                                test_domain=section.get("train_domain", "restaurants"),
                                few_shot=FewShotSpec(size=size, seed=seed),
                                template_id=template_id, **common)
                            trained = exp.run_one(cfg, data, registry, templates=templates)
                            transfer = exp.acsc_transfer(trained, acsc_examples, aliases=aliases,
                                                         templates=templates)
                            exp.save_run(transfer, runs_dir)
                            written += 1
                        except (exp.RunError, ValueError) as exc:
                            failures.append(exc)

    if config.ablation:
        section = config.ablation
        template_spec = section.get("template", "is")
        for domain in section.get("domains", []):
            template_id = (template_spec.get(domain, "is")
                           if isinstance(template_spec, dict) else template_spec)
            try:
                cfg = exp.RunConfig(
                    head=section.get("head", "nli"),
                    backend=exp.backend_descriptor_for(
                        section.get("head", "nli"), section.get("provenance", "generic"), domain),
                    train_domain=domain, test_domain=domain,
                    few_shot=FewShotSpec(size=section.get("size", 0), seed=seed_list[0]),
                    template_id=template_id, **common)
                trained = exp.run_one(cfg, data, registry, templates=templates)
                ablation = exp.aspect_ablation(
                    trained, data.get(domain, "test"),
                    replacement=section.get("replacement", "things"), templates=templates)
                record = {
                    "fingerprint": cfg.fingerprint(),
                    "domain": domain,
                    "replacement": ablation.replacement,
                    "original": ablation.original.as_dict(),
                    "replaced": ablation.replaced.as_dict(),
                    "delta_accuracy": ablation.delta_accuracy,
                    "delta_macro_f1": ablation.delta_macro_f1,
                }
                runs_dir.mkdir(parents=True, exist_ok=True)
                (runs_dir / f"ablation_{domain}_{cfg.fingerprint()}.json").write_text(
                    json.dumps(record, indent=2) + "\n")
                written += 1
            except (exp.RunError, ValueError) as exc:
                failures.append(exc)

    index = {
        "fingerprint": fingerprint({"command": "run", "config": config.raw}),
        "runs_written": written,
        "failures": [str(f) for f in failures],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    print(f"run: {written} result files in {runs_dir}, {len(failures)} failures [{index['fingerprint']}]")
    return 0 if not failures else 1


_LAYOUT_PROTOCOLS = {
    "main": ("main",),
    "per_prompt": ("main",),
    "per_class": ("main",),
    "cross_domain": ("main", "cross_domain"),
    "acsc": ("acsc",),
}


def cmd_report(args) -> int:
    from .experiments import load_run_rows

    runs_dir = Path(args.runs)
    if not runs_dir.exists():
        return _fail(f"runs directory not found: {runs_dir}")
    rows = [r for r in load_run_rows(runs_dir)
            if r.get("protocol", "main") in _LAYOUT_PROTOCOLS[args.layout]]
    if not rows:
        return _fail(f"no runs matching layout {args.layout!r} in {runs_dir}")
    table = tabulate(rows, layout=args.layout)
    fp = fingerprint({"command": "report", "layout": args.layout,
                      "rows": sorted(str(sorted(r.items())) for r in rows)})
    base = Path(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    txt_path = base.with_suffix(".txt")
    csv_path.write_text(f"# fingerprint={fp}\n" + table.csv_text, encoding="utf-8")
    txt_path.write_text(f"[{args.layout}] fingerprint={fp}\n" + table.pretty_text, encoding="utf-8")
    print(f"report: {args.layout} tables -> {csv_path}, {txt_path} [{fp}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atsc-prompts",
        description="Aspect-target sentiment classification with prompts: "
                    "data ingestion, pretraining data, experiment grids, and reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="parse SemEval XML into labeled examples")
    ingest.add_argument("--task", choices=("atsc", "acsc"), required=True)
    ingest.add_argument("--domain", choices=("laptops", "restaurants"), required=True)
    ingest.add_argument("--in", dest="in_path", required=True)
    ingest.add_argument("--out", required=True)
    ingest.set_defaults(fn=cmd_ingest)

    corpus = sub.add_parser("corpus", help="extract pretraining sentences from raw reviews")
    corpus.add_argument("--source", required=True)
    corpus.add_argument("--domain", choices=("laptops", "restaurants"), required=True)
    corpus.add_argument("--limit", type=int, default=None)
    corpus.add_argument("--out", required=True)
    corpus.set_defaults(fn=cmd_corpus)

    pretrain = sub.add_parser("pretrain", help="build (and optionally train on) pretraining instances")
    pretrain.add_argument("--domain", choices=("laptops", "restaurants"), required=True)
    pretrain.add_argument("--corpus", required=True, help="sentence file, one per line")
    pretrain.add_argument("--steps", type=int, default=100)
    pretrain.add_argument("--objective", choices=("masked", "causal"), default="masked")
    pretrain.add_argument("--mask-rate", type=float, default=0.15)
    pretrain.add_argument("--window", type=int, default=64)
    pretrain.add_argument("--seed", type=int, default=0)
    pretrain.add_argument("--config", default=None, help="project config with a backend to train")
    pretrain.add_argument("--out", required=True)
    pretrain.set_defaults(fn=cmd_pretrain)

    run = sub.add_parser("run", help="execute the configured experiment protocols")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--seed-list", type=int, nargs="+", default=None)
    run.add_argument("--workers", type=int, default=None)
    run.set_defaults(fn=cmd_run)

    report = sub.add_parser("report", help="tabulate finished runs")
    report.add_argument("--runs", required=True)
    report.add_argument("--layout", choices=("main", "cross_domain", "acsc", "per_prompt", "per_class"),
                        default="main")
    report.add_argument("--out", required=True)
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
