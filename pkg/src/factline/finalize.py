"""Finalization: hierarchical deduplication and the last-pass integrity gate.

Dedup is a single left-to-right pass with keep-first semantics. With a date
field, a record is checked against (and inserted into) only the seen-set of
its own date precision, so day-, month- and year-precision records for the
same fingerprint coexist. Without one, the full-field fingerprint dedups.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum

from .context import OperationalContext, render_integrity_descriptions
from .errors import ParseExhausted, UnparseableDate
from .gateway import AgentKind, Gateway, ResponseShape, ShapeField
from .prompting import render
from .schema import (
    DataPoint,
    SchemaSpec,
    ViolationKind,
    canonical_string,
    normalize_date,
    validate_record,
)

logger = logging.getLogger(__name__)

INTEGRITY_CHUNK_SIZE = 25


class DropReason(str, Enum):
    FILTERED_INCOMPLETE = "FILTERED_INCOMPLETE"
    DUPLICATE = "DUPLICATE"
    INTEGRITY_FAILED = "INTEGRITY_FAILED"


@dataclass(frozen=True)
class Dropped:
    record: DataPoint
    reason: DropReason
    detail: str = ""


class IntegrityRule(str, Enum):
    COMPLETENESS = "COMPLETENESS"
    PLAUSIBILITY = "PLAUSIBILITY"


@dataclass(frozen=True)
class IntegrityFinding:
    row_id: str
    rule: IntegrityRule
    field: str
    explanation: str


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("|", "\\|")


def fingerprint(dp: DataPoint, schema: SchemaSpec, include_date: bool = False) -> str:
    """Injective canonical encoding of the record's field values.

    By default the field literally named ``date`` is excluded (the base
    fingerprint); escaping makes distinct value tuples encode distinctly.
    """
    parts = []
    for f in schema.fields:
        if not include_date and f.name == "date":
            continue
        parts.append(_escape(canonical_string(dp.values.get(f.name), f)))
    return "|".join(parts)


def _has_missing(dp: DataPoint, schema: SchemaSpec) -> list[str]:
    return [
        v.field
        for v in validate_record(dp, schema)
        if v.kind == ViolationKind.MISSING
    ]


def dedup(
    records: list[DataPoint], schema: SchemaSpec
) -> tuple[list[DataPoint], list[Dropped]]:
    """Order-preserving keep-first dedup over already-coerced records."""
    kept: list[DataPoint] = []
    dropped: list[Dropped] = []
    seen: set = set()
    date_field = schema.date_field

    for dp in records:
        missing = _has_missing(dp, schema)
        if missing:
            dropped.append(
                Dropped(dp, DropReason.FILTERED_INCOMPLETE, f"missing: {', '.join(missing)}")
            )
            continue
        if date_field is not None:
            raw_date = dp.values.get("date")
            if raw_date in (None, ""):
                # Optional date left empty: its own bucket, still keep-first.
                key = (fingerprint(dp, schema), "EMPTY", "")
            else:
                try:
                    date = normalize_date(str(raw_date))
                except UnparseableDate:
                    # Should not survive coercion; defensively treat as incomplete.
                    dropped.append(
                        Dropped(dp, DropReason.FILTERED_INCOMPLETE, "unparseable date")
                    )
                    continue
                key = (fingerprint(dp, schema), date.precision.value, date.canonical)
        else:
            key = (fingerprint(dp, schema, include_date=True),)
        if key in seen:
            dropped.append(Dropped(dp, DropReason.DUPLICATE, f"key {key!r}"))
            continue
        seen.add(key)
        kept.append(dp)
    return kept, dropped


_INTEGRITY_SHAPE = ResponseShape(ShapeField("findings", "list"))


def _chunks(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


async def integrity_check(
    gateway: Gateway,
    records: list[DataPoint],
    schema: SchemaSpec,
    ctx: OperationalContext | None,
) -> tuple[list[DataPoint], list[IntegrityFinding], list[str]]:
    """Two hard-coded rules: completeness (deterministic, no model call) then
    plausibility (batched model calls). Returns survivors, findings, warnings.

    A chunk whose plausibility response stays unparseable passes with a
    warning: dedup already enforced structure, this is a last-pass heuristic.
    """
    findings: list[IntegrityFinding] = []
    warnings: list[str] = []
    candidates: list[DataPoint] = []
    for dp in records:
        missing = _has_missing(dp, schema)
        if missing:
            findings.extend(
                IntegrityFinding(dp.row_id, IntegrityRule.COMPLETENESS, f, "required field is empty")
                for f in missing
            )
            continue
        candidates.append(dp)

    flagged: set[str] = set()
    descriptions = render_integrity_descriptions(ctx, schema)
    for index, chunk in enumerate(_chunks(candidates, INTEGRITY_CHUNK_SIZE)):
        rows = "\n".join(
            json.dumps({"row_id": dp.row_id, **{n: dp.values.get(n) for n in schema.field_names}},
                       ensure_ascii=False, default=str)
            for dp in chunk
        )
        prompt = render("integrity", field_descriptions=descriptions, rows=rows)
        try:
            doc, _ = await gateway.complete_structured(
                AgentKind.INTEGRITY, f"chunk-{index}", prompt, _INTEGRITY_SHAPE
            )
        except ParseExhausted:
            warnings.append(f"integrity chunk {index} unparseable; chunk passed unchecked")
            continue
        chunk_ids = {dp.row_id for dp in chunk}
        for item in doc["findings"]:
            if not isinstance(item, dict):
                continue
            row_id = str(item.get("row_id") or "")
            if row_id not in chunk_ids:
                continue
            flagged.add(row_id)
            findings.append(
                IntegrityFinding(
                    row_id=row_id,
                    rule=IntegrityRule.PLAUSIBILITY,
                    field=str(item.get("field") or "?"),
                    explanation=str(item.get("explanation") or "implausible value"),
                )
            )

    accepted = [dp for dp in candidates if dp.row_id not in flagged]
    return accepted, findings, warnings
