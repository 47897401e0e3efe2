"""Accuracy, macro F1, per-class F1, two-mean z-tests, and table rendering."""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import POLARITIES


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    n: int
    accuracy: float
    macro_f1: float
    per_class_f1: Mapping[str, float]
    confusion: tuple[tuple[int, int, int], ...]  # rows gold, cols predicted
    fingerprint: str = ""

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": dict(self.per_class_f1),
            "confusion": [list(row) for row in self.confusion],
            "fingerprint": self.fingerprint,
        }


def score(gold: Sequence[str], predicted: Sequence[str], fingerprint: str = "") -> EvalReport:
    """Confusion matrix and derived metrics over the three polarities.

    A class with a zero denominator (absent from both gold and predictions,
    or zero precision+recall) contributes F1 = 0 to the macro average.
    """
    if len(gold) != len(predicted):
        raise MetricsError(f"length mismatch: {len(gold)} gold vs {len(predicted)} predicted")
    if not gold:
        raise MetricsError("cannot score an empty prediction set")
    index = {label: i for i, label in enumerate(POLARITIES)}
    counts = [[0, 0, 0] for _ in POLARITIES]
    for g, p in zip(gold, predicted):
        if g not in index or p not in index:
            raise MetricsError(f"unknown label in pair ({g!r}, {p!r})")
        counts[index[g]][index[p]] += 1
    n = len(gold)
    accuracy = sum(counts[i][i] for i in range(3)) / n
    per_class_f1 = {}
    for i, label in enumerate(POLARITIES):
        tp = counts[i][i]
        fp = sum(counts[r][i] for r in range(3)) - tp
        fn = sum(counts[i]) - tp
        denominator = 2 * tp + fp + fn
        per_class_f1[label] = 2 * tp / denominator if denominator else 0.0
    macro_f1 = sum(per_class_f1.values()) / len(POLARITIES)
    return EvalReport(
        n=n,
        accuracy=accuracy,
        macro_f1=macro_f1,
        per_class_f1=per_class_f1,
        confusion=tuple(tuple(row) for row in counts),
        fingerprint=fingerprint,
    )


@dataclass(frozen=True)
class SignificanceResult:
    group_a: tuple[float, ...]
    group_b: tuple[float, ...]
    z: float
    p: float
    significant_at_05: bool


def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def z_test(
    a: Sequence[float],
    b: Sequence[float],
    two_sided: bool = False,
    pooled: bool = False,
) -> SignificanceResult:
    """Two-mean z-test; the default is one-sided for mean(a) > mean(b).

    Sample variances are unpooled by default (pooled=True pools them).
    Zero variance with equal means yields p = 0.5; zero variance with
    unequal means yields p of 0 or 1 by sign.
    """
    if len(a) < 2 or len(b) < 2:
        raise MetricsError("each group needs at least 2 scores")
    for value in (*a, *b):
        if not 0.0 <= value <= 1.0:
            raise MetricsError(f"scores must lie in [0,1], got {value}")
    mean_a, mean_b = statistics.fmean(a), statistics.fmean(b)
    var_a, var_b = statistics.variance(a), statistics.variance(b)
    if pooled:
        pooled_var = ((len(a) - 1) * var_a + (len(b) - 1) * var_b) / (len(a) + len(b) - 2)
        spread = math.sqrt(pooled_var * (1 / len(a) + 1 / len(b)))
    else:
        spread = math.sqrt(var_a / len(a) + var_b / len(b))
    if spread == 0.0:
        z = 0.0 if mean_a == mean_b else math.copysign(math.inf, mean_a - mean_b)
    else:
        z = (mean_a - mean_b) / spread
    if math.isinf(z):
        p_one = 0.0 if z > 0 else 1.0
    else:
        p_one = 1.0 - _normal_cdf(z)
    p = 2 * min(p_one, 1.0 - p_one) if two_sided else p_one
    return SignificanceResult(
        group_a=tuple(a),
        group_b=tuple(b),
        z=z,
        p=p,
        significant_at_05=p < 0.05,
    )


LAYOUTS = ("main", "cross_domain", "acsc", "per_prompt", "per_class")

MISSING = "--"


@dataclass
class TableDocument:
    layout: str
    csv_text: str
    pretty_text: str


def _as_row(result) -> dict:
    if hasattr(result, "row"):
        return result.row()
    return dict(result)


def _fmt(value, digits: int = 2) -> str:
    if value is None:
        return MISSING
    return f"{100 * value:.{digits}f}"


def _size_key(size) -> tuple:
    return (1, 0) if size == "full" else (0, size)


def _group(rows, key_fields):
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row.get(f) for f in key_fields)
        groups.setdefault(key, []).append(row)
    return groups


def _mean_over_seeds_then_templates(rows: list[dict], metric: str) -> float:
    by_template = _group(rows, ("template_id",))
    template_means = []
    for template_rows in by_template.values():
        template_means.append(statistics.fmean(r[metric] for r in template_rows))
    return statistics.fmean(template_means)


def _render_text(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in ([header] + body)]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(header: list[str], body: list[list[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buffer.getvalue()


def _main_layout(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    from .heads import BASELINE_HEADS

    header = ["domain", "head", "size", "accuracy", "macro_f1",
              "delta_acc", "delta_mf1", "significant_acc", "significant_mf1"]
    body = []
    cells = _group(rows, ("test_domain", "head", "size"))
    domains = sorted({r["test_domain"] for r in rows})
    heads = sorted({r["head"] for r in rows})
    sizes = sorted({r["size"] for r in rows}, key=_size_key)
    for domain in domains:
        for head in heads:
            for size in sizes:
                cell = cells.get((domain, head, size))
                if not cell:
                    body.append([domain, head, str(size)] + [MISSING] * 6)
                    continue
                acc = _mean_over_seeds_then_templates(cell, "accuracy")
                mf1 = _mean_over_seeds_then_templates(cell, "macro_f1")
                deltas = [MISSING] * 4
                if head not in BASELINE_HEADS:
                    deltas = _deltas_vs_best_baseline(cells, domain, size, cell, acc, mf1)
                body.append([domain, head, str(size), _fmt(acc), _fmt(mf1)] + deltas)
    return header, body


def _deltas_vs_best_baseline(cells, domain, size, cell, acc, mf1) -> list[str]:
    from .heads import BASELINE_HEADS

    baseline_cells = {h: cells.get((domain, h, size)) for h in BASELINE_HEADS}
    baseline_cells = {h: c for h, c in baseline_cells.items() if c}
    if not baseline_cells:
        return [MISSING] * 4
    out = []
    for metric, value in (("accuracy", acc), ("macro_f1", mf1)):
        best_head = max(baseline_cells,
                        key=lambda h: _mean_over_seeds_then_templates(baseline_cells[h], metric))
        best_rows = baseline_cells[best_head]
        best = _mean_over_seeds_then_templates(best_rows, metric)
        try:
            test = z_test([r[metric] for r in cell], [r[metric] for r in best_rows])
            star = "*" if test.significant_at_05 else ""
        except MetricsError:
            star = ""
        out.append((f"{100 * (value - best):+.2f}", star))
    return [out[0][0], out[1][0], out[0][1], out[1][1]]


def _cross_domain_layout(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["head", "regime", "test_domain", "size", "accuracy"]
    body = []
    cells = _group(rows, ("head", "regime", "test_domain", "size"))
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], _size_key(k[3]))):
        cell = cells[key]
        acc = _mean_over_seeds_then_templates(cell, "accuracy")
        body.append([key[0], key[1], key[2], str(key[3]), _fmt(acc)])
    return header, body


def _acsc_layout(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["head", "size", "accuracy", "macro_f1"]
    body = []
    cells = _group(rows, ("head", "size"))
    for key in sorted(cells, key=lambda k: (k[0], _size_key(k[1]))):
        cell = cells[key]
        body.append([key[0], str(key[1]),
                     _fmt(_mean_over_seeds_then_templates(cell, "accuracy")),
                     _fmt(_mean_over_seeds_then_templates(cell, "macro_f1"))])
    return header, body


def _per_prompt_layout(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["head", "template", "size", "accuracy", "acc_stderr", "macro_f1", "mf1_stderr"]
    body = []
    cells = _group(rows, ("head", "template_id", "size"))
    for key in sorted(cells, key=lambda k: (k[0], str(k[1]), _size_key(k[2]))):
        cell = cells[key]
        accs = [r["accuracy"] for r in cell]
        mf1s = [r["macro_f1"] for r in cell]
        acc_se = statistics.stdev(accs) / math.sqrt(len(accs)) if len(accs) > 1 else 0.0
        mf1_se = statistics.stdev(mf1s) / math.sqrt(len(mf1s)) if len(mf1s) > 1 else 0.0
        body.append([key[0], str(key[1]), str(key[2]),
                     _fmt(statistics.fmean(accs)), f"{acc_se:.4f}",
                     _fmt(statistics.fmean(mf1s)), f"{mf1_se:.4f}"])
    return header, body


def _per_class_layout(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["domain", "head", "size", "class", "f1"]
    body = []
    cells = _group(rows, ("test_domain", "head", "size"))
    for key in sorted(cells, key=lambda k: (k[0], k[1], _size_key(k[2]))):
        cell = cells[key]
        for label in POLARITIES:
            values = [r["per_class_f1"][label] for r in cell]
            body.append([key[0], key[1], str(key[2]), label, _fmt(statistics.fmean(values))])
    return header, body


def tabulate(results: Sequence, layout: str) -> TableDocument:
    """Aggregate run results into a deterministic CSV + aligned-text table."""
    if layout not in LAYOUTS:
        raise MetricsError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    rows = [_as_row(r) for r in results]
    if not rows:
        raise MetricsError("no results to tabulate")
    if layout == "cross_domain":
        for row in rows:
            row.setdefault("regime", "in" if row["train_domain"] == row["test_domain"] else "cross")
    builder = {
        "main": _main_layout,
        "cross_domain": _cross_domain_layout,
        "acsc": _acsc_layout,
        "per_prompt": _per_prompt_layout,
        "per_class": _per_class_layout,
    }[layout]
    header, body = builder(rows)
    return TableDocument(layout=layout, csv_text=_csv(header, body),
                         pretty_text=_render_text(header, body))
