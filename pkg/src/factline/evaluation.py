"""Evaluation harness: ground-truth matching, metrics, config comparisons.

Matching is row-level: exact canonical equality on non-date fields, with date
fields compared at the coarser of the two precisions. The rule is a pluggable
policy (pass a different ``matcher`` to run_comparison) so stricter variants
can be evaluated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

from .csvio import read_rows
from .errors import RunAborted, UncoercibleValue, UnparseableDate
from .pipeline import RunConfig, RunReport, execute_run
from .schema import (
    DataPoint,
    SchemaSpec,
    canonical_string,
    coerce_record,
    normalize_date,
)


@dataclass
class GroundTruth:
    records: list[DataPoint]
    remediable_ids: set | None = None

    @classmethod
    def from_csv(cls, source, schema: SchemaSpec) -> "GroundTruth":
        headers, raw_rows = read_rows(source)
        missing = [name for name in schema.field_names if name not in headers]
        if missing:
            raise RunAborted(f"ground truth is missing schema columns: {missing}")
        has_marker = "remediable" in headers
        records = []
        remediable: set = set()
        for index, raw in enumerate(raw_rows):
            row_id = str(raw.get("row_id") or f"gt{index + 1}")
            record = DataPoint(
                row_id=row_id,
                values={name: raw.get(name, "") for name in schema.field_names},
                source_url=str(raw.get("source_url") or "http://ground-truth.invalid/"),
            )
            try:
                records.append(coerce_record(record, schema))
            except UncoercibleValue as exc:
                raise RunAborted(f"ground truth row {row_id} does not coerce: {exc}")
            if has_marker and str(raw.get("remediable") or "").strip():
                remediable.add(row_id)
        return cls(records=records, remediable_ids=remediable if has_marker else None)


@dataclass
class MatchResult:
    pairs: list
    unmatched_output: list
    unmatched_gt: list


def _dates_match(a, b) -> bool:
    try:
        da, db = normalize_date(str(a)), normalize_date(str(b))
    except UnparseableDate:
        return str(a) == str(b)
    coarser = max(da.precision, db.precision, key=lambda p: ["DAY", "MONTH", "YEAR"].index(p.value))
    return da.truncated(coarser).canonical == db.truncated(coarser).canonical


def records_match(out: DataPoint, gt: DataPoint, schema: SchemaSpec) -> bool:
    for f in schema.fields:
        a, b = out.values.get(f.name), gt.values.get(f.name)
        if f.name == "date":
            a_text, b_text = str(a or ""), str(b or "")
            if not a_text and not b_text:
                continue
            if not a_text or not b_text or not _dates_match(a_text, b_text):
                return False
            continue
        if canonical_string(a, f) != canonical_string(b, f):
            return False
    return True


def match_records(
    output: list[DataPoint],
    gt: list[DataPoint],
    schema: SchemaSpec,
    matcher=records_match,
) -> MatchResult:
    """Greedy deterministic matching: GT order first, then output order."""
    pairs = []
    used = [False] * len(output)
    matched_gt = [False] * len(gt)
    for g_index, gt_row in enumerate(gt):
        for o_index, out_row in enumerate(output):
            if used[o_index]:
                continue
            if matcher(out_row, gt_row, schema):
                used[o_index] = True
                matched_gt[g_index] = True
                pairs.append((out_row, gt_row))
                break
    return MatchResult(
        pairs=pairs,
        unmatched_output=[r for r, u in zip(output, used) if not u],
        unmatched_gt=[r for r, m in zip(gt, matched_gt) if not m],
    )


def round1(value: float) -> float:
    """Half-away-from-zero rounding to one decimal."""
    return float(Decimal(str(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    precision_defined: bool
    remediation_recall: float | None
    time_total: float
    latency_mean: float
    cost_total: Decimal

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_defined": self.precision_defined,
            "remediation_recall": self.remediation_recall,
            "time_total_s": round(self.time_total, 3),
            "latency_mean_s": round(self.latency_mean, 3),
            "cost_total": str(self.cost_total),
        }


def compute_metrics(
    match: MatchResult,
    remediated_ids: set,
    gt: GroundTruth,
    time_total: float = 0.0,
    latency_mean: float = 0.0,
    cost_total: Decimal = Decimal("0"),
) -> Metrics:
    matched = len(match.pairs)
    output_size = matched + len(match.unmatched_output)
    gt_size = matched + len(match.unmatched_gt)
    precision_defined = output_size > 0
    precision = (matched / output_size * 100) if output_size else 0.0
    recall = (matched / gt_size * 100) if gt_size else 0.0
    f1 = f1_from(precision, recall)
    remediation_recall = None
    if gt.remediable_ids is not None:
        if gt.remediable_ids:
            remediated_matched = sum(
                1 for out_row, _ in match.pairs if out_row.row_id in remediated_ids
            )
            remediation_recall = round1(remediated_matched / len(gt.remediable_ids) * 100)
        else:
            remediation_recall = 0.0
    return Metrics(
        precision=round1(precision),
        recall=round1(recall),
        f1=round1(f1),
        precision_defined=precision_defined,
        remediation_recall=remediation_recall,
        time_total=time_total,
        latency_mean=latency_mean,
        cost_total=cost_total,
    )


def evaluate_report(report: RunReport, gt: GroundTruth) -> Metrics:
    match = match_records(report.final_records, gt.records, report.schema)
    remediated_ids = {
        row_id
        for row_id, outcome in report.outcomes.items()
        if outcome["status"] == "REMEDIATED"
    }
    return compute_metrics(
        match,
        remediated_ids,
        gt,
        time_total=report.time_total,
        latency_mean=report.latency_mean,
        cost_total=report.cost_total,
    )


_DELTA_KEYS = ("precision", "recall", "f1", "remediation_recall")


async def run_comparison(
    headers: list[str],
    raw_rows: list[dict],
    gt: GroundTruth,
    configs: list,
    out_dir=None,
    services_factory=None,
    matcher=records_match,
) -> dict:
    """Run each (name, RunConfig) sequentially and tabulate versus the first.

    A run that raises is recorded as a failed cell, never a harness crash.
    Returns the machine-readable report; when ``out_dir`` is set, also writes
    comparison.json, comparison.txt and comparison.png there.
    """
    rows = []
    baseline: Metrics | None = None
    for name, config in configs:
        services = services_factory(config) if services_factory else None
        try:
            report = await execute_run(headers, raw_rows, config, services=services)
            match = match_records(report.final_records, gt.records, report.schema, matcher)
            remediated = {
                row_id
                for row_id, outcome in report.outcomes.items()
                if outcome["status"] == "REMEDIATED"
            }
            metrics = compute_metrics(
                match, remediated, gt,
                time_total=report.time_total,
                latency_mean=report.latency_mean,
                cost_total=report.cost_total,
            )
        except Exception as exc:  # noqa: BLE001 - failed cell, not a crash
            rows.append({"name": name, "failed": True, "error": str(exc), "config": config.to_dict()})
            continue
        if baseline is None:
            baseline = metrics
        deltas = {}
        for key in _DELTA_KEYS:
            value, base = getattr(metrics, key), getattr(baseline, key)
            if value is None or base is None:
                deltas[key] = None
            else:
                deltas[key] = round1(value - base)
        rows.append(
            {
                "name": name,
                "failed": False,
                "metrics": metrics.to_dict(),
                "delta": deltas,
                "config": config.to_dict(),
            }
        )
    comparison = {"baseline": configs[0][0] if configs else None, "rows": rows}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.json").write_text(
            json.dumps(comparison, indent=2), encoding="utf-8"
        )
        (out_dir / "comparison.txt").write_text(render_table(comparison), encoding="utf-8")
        save_chart(comparison, out_dir / "comparison.png")
    return comparison


def render_table(comparison: dict) -> str:
    header = f"{'system':<24} {'F1':>7} {'P':>7} {'R':>7} {'Rem':>7} {'Time':>9} {'Lat':>7} {'Cost':>9}"
    lines = [header, "-" * len(header)]
    for row in comparison["rows"]:
        if row.get("failed"):
            lines.append(f"{row['name']:<24} FAILED: {row['error']}")
            continue
        m = row["metrics"]
        delta = row["delta"]
        rem = "n/a" if m["remediation_recall"] is None else f"{m['remediation_recall']:.1f}"
        lines.append(
            f"{row['name']:<24} {m['f1']:>7.1f} {m['precision']:>7.1f} "
            f"{m['recall']:>7.1f} {rem:>7} {m['time_total_s']:>8.1f}s "
            f"{m['latency_mean_s']:>6.2f}s {m['cost_total']:>9}"
        )
        lines.append(
            f"{'':<24} {_fmt_delta(delta['f1']):>7} {_fmt_delta(delta['precision']):>7} "
            f"{_fmt_delta(delta['recall']):>7} {_fmt_delta(delta['remediation_recall']):>7}"
        )
    return "\n".join(lines) + "\n"


def _fmt_delta(value) -> str:
    if value is None:
        return ""
    return f"({value:+.1f})"


def save_chart(comparison: dict, path):
    """Cost-versus-F1 scatter; bubble size tracks total processing time."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    ok_rows = [r for r in comparison["rows"] if not r.get("failed")]
    costs = [float(r["metrics"]["cost_total"]) for r in ok_rows]
    f1s = [r["metrics"]["f1"] for r in ok_rows]
    times = [max(r["metrics"]["time_total_s"], 0.001) for r in ok_rows]
    top = max(times)
    sizes = [60 + 900 * t / top for t in times]
    ax.scatter(costs, f1s, s=sizes, alpha=0.55, edgecolors="black")
    for row, x, y in zip(ok_rows, costs, f1s):
        ax.annotate(row["name"], (x, y), fontsize=8, ha="center", va="bottom")
    ax.set_xlabel("total cost")
    ax.set_ylabel("F1")
    ax.set_title("Quality vs cost (bubble size: total time)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
