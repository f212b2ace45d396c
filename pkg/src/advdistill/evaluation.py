"""Accuracy, the one-sample Wilcoxon signed-rank test, and results tables."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_N = 25
ALPHA = 0.05
FORMATS = ("csv", "json", "markdown")
CSV_COLUMNS = ("pair", "method", "seed_count", "mean_pct", "std_pct", "p_value", "starred")


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.size == 0 or p.size != y.size:
        raise ValueError(f"need equal, non-empty lengths; got {p.size} and {y.size}")
    return float(np.mean(p == y))


def signed_ranks(samples: Sequence[float], mu0: float) -> tuple[np.ndarray, np.ndarray]:
    """Mid-ranks of |x - mu0| and the signs of x - mu0, with zero differences dropped."""
    d = np.asarray(samples, dtype=np.float64) - float(mu0)
    d = d[d != 0.0]
    return rankdata(np.abs(d)), np.sign(d)


def wilcoxon_one_sample(samples: Sequence[float], mu0: float) -> float:
    """One-sided p-value for H1: location of ``samples`` is greater than ``mu0``.

    The statistic is the sum of positive mid-ranks.  For n <= 25 the null
    distribution is exact: every one of the 2**n sign assignments of the
    observed ranks is counted (via a generating-function convolution over
    doubled ranks, so mid-ranks stay integral).  Larger n falls back to the
    tie-corrected normal approximation with continuity correction.
    """
    ranks, signs = signed_ranks(samples, mu0)
    n = ranks.size
    if n == 0:
        return 1.0
    doubled = np.rint(2 * ranks).astype(np.int64)
    w_obs = int(doubled[signs > 0].sum())
    if n <= EXACT_MAX_N:
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=object)
        counts[0] = 1
        for r in doubled:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:total + 1 - r]
            counts = counts + shifted
        tail = sum(counts[w_obs:])
        return float(Decimal(int(tail)) / Decimal(2 ** n))
    mean = doubled.sum() / 2.0
    var = float((doubled.astype(np.float64) ** 2).sum()) / 4.0
    z = (w_obs - mean - 1.0) / math.sqrt(var) if var > 0 else 0.0
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass
class Row:
    pair: str
    method: str
    n: int
    mean: float
    std: float
    p_value: float | None = None
    starred: bool = False
    failures: int = 0


@dataclass
class ResultsTable:
    rows: list[Row] = field(default_factory=list)
    baseline: str | None = None
    runs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def pairs(self) -> list[str]:
        return list(dict.fromkeys(r.pair for r in self.rows))

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def cell(self, pair: str, method: str) -> Row:
        for r in self.rows:
            if r.pair == pair and r.method == method:
                return r
        raise KeyError((pair, method))

    def daggers(self, method: str) -> int:
        return sum(r.starred for r in self.rows if r.method == method)

    def average(self, method: str) -> float:
        vals = [r.mean for r in self.rows if r.method == method and r.n > 0]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def failed_runs(self) -> list:
        return [r for r in self.runs if getattr(r, "error", None)]


def _sample_std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def aggregate(results, baseline: str | None = "baseline",
              method_order: Sequence[str] | None = None) -> ResultsTable:
    """Per-(pair, method) mean, sample std and significance against the baseline's mean.

    Failed runs (``error`` set) are kept in ``table.runs`` and counted in
    ``Row.failures`` but contribute no accuracy.  A cell is starred when the
    one-sided Wilcoxon p-value against the baseline mean is below 0.05.
    """
    results = list(results)
    cells: dict[tuple[str, str], list] = defaultdict(list)
    for r in results:
        cells[(r.pair, r.method)].append(r)
    pairs = list(dict.fromkeys(r.pair for r in results))
    methods = list(dict.fromkeys(r.method for r in results))
    if method_order is not None:
        methods = [m for m in method_order if m in methods] + [m for m in methods if m not in method_order]
    if baseline is not None and baseline not in methods:
        baseline = None

    rows = []
    for pair in sorted(pairs) if method_order is None else pairs:
        ref = None
        if baseline is not None:
            base = [r.target_accuracy for r in cells.get((pair, baseline), []) if r.error is None]
            if not base:
                raise ValueError(f"no successful baseline runs for pair {pair!r}")
            ref = float(np.mean(base))
        for method in methods:
            runs = cells.get((pair, method))
            if not runs:
                continue
            acc = np.array(sorted(r.target_accuracy for r in runs if r.error is None), dtype=np.float64)
            fails = sum(r.error is not None for r in runs)
            row = Row(pair, method, int(acc.size), float(acc.mean()) if acc.size else float("nan"),
                      _sample_std(acc), failures=fails)
            if ref is not None and method != baseline and acc.size:
                row.p_value = wilcoxon_one_sample(acc, ref)
                row.starred = row.p_value < ALPHA
            rows.append(row)
    return ResultsTable(rows=rows, baseline=baseline, runs=results)


def format_pct(value: float) -> str:
    """Percentage with one decimal, rounding half away from zero."""
    if value is None or not math.isfinite(value):
        return "nan"
    return str((Decimal(repr(float(value))) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_cell(row: Row, with_std: bool = True) -> str:
    text = format_pct(row.mean) + ("*" if row.starred else "")
    return f"{text}±{format_pct(row.std)}" if with_std else text


def _csv(table: ResultsTable, meta: dict) -> str:
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in table.rows:
        writer.writerow([r.pair, r.method, r.n, format_pct(r.mean), format_pct(r.std),
                         "" if r.p_value is None else repr(r.p_value), int(r.starred)])
    return buf.getvalue()


def _json(table: ResultsTable, meta: dict) -> str:
    doc = {
        "meta": meta,
        "baseline": table.baseline,
        "rows": [
            {"pair": r.pair, "method": r.method, "seed_count": r.n, "mean_pct": format_pct(r.mean),
             "std_pct": format_pct(r.std), "p_value": r.p_value, "starred": r.starred,
             "failures": r.failures}
            for r in table.rows
        ],
        "averages": [
            {"method": m, "mean_pct": format_pct(table.average(m)), "daggers": table.daggers(m)}
            for m in table.methods
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _markdown(table: ResultsTable, meta: dict) -> str:
    methods = table.methods
    lines = ["| Source → Target | " + " | ".join(methods) + " |",
             "|---|" + "---|" * len(methods)]
    for pair in table.pairs:
        cells = []
        for m in methods:
            try:
                cells.append(format_cell(table.cell(pair, m)))
            except KeyError:
                cells.append("")
        lines.append(f"| {pair} | " + " | ".join(cells) + " |")
    if table.rows:
        avg = []
        for m in methods:
            text = format_pct(table.average(m))
            avg.append(text if m == table.baseline else f"{text} ({table.daggers(m)}†)")
        lines.append("| Average | " + " | ".join(avg) + " |")
    return "\n".join(lines) + "\n"


def emit_table(table: ResultsTable, format: str = "csv", meta: dict | None = None) -> str:  # noqa: A002
    """Render ``table`` as csv, json or markdown, ordered by pair then method."""
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")
    meta = dict(meta if meta is not None else table.meta)
    return {"csv": _csv, "json": _json, "markdown": _markdown}[format](table, meta)


def load_table_csv(text: str) -> ResultsTable:
    """Inverse of the csv emitter (values carry the emitted one-decimal precision)."""
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = json.loads(value)
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected csv header {reader.fieldnames}")
    rows = []
    for rec in reader:
        rows.append(Row(rec["pair"], rec["method"], int(rec["seed_count"]),
                        float(Decimal(rec["mean_pct"]) / 100), float(Decimal(rec["std_pct"]) / 100),
                        float(rec["p_value"]) if rec["p_value"] else None, rec["starred"] == "1"))
    baseline = next((r.method for r in rows if r.p_value is None), None) if rows else None
    return ResultsTable(rows=rows, baseline=baseline, meta=meta)


def runs_to_json(runs) -> str:
    return json.dumps([r.to_dict() if hasattr(r, "to_dict") else asdict(r) for r in runs],
                      indent=1, sort_keys=True) + "\n"
