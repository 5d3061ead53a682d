"""CSV ingestion and canonical output rendering."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import RunAborted
from .schema import DataPoint, SchemaSpec, canonical_string

OUTPUT_LINE_TERMINATOR = "\n"


def read_rows(source) -> tuple[list[str], list[dict]]:
    """Read a UTF-8 CSV with a header row into (headers, row dicts)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8-sig") as fh:
            return _read(fh)
    return _read(source)


def _read(fh) -> tuple[list[str], list[dict]]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise RunAborted("input CSV has no header row")
    headers = [h.strip() for h in reader.fieldnames]
    rows = []
    for raw in reader:
        row = {}
        for key, value in raw.items():
            if key is None:
                continue  # cells beyond the header are dropped
            row[key.strip()] = "" if value is None else value
        rows.append(row)
    return headers, rows


def output_columns(schema: SchemaSpec, passthrough_columns: tuple[str, ...]) -> list[str]:
    return [*schema.field_names, *passthrough_columns, "origin", "source_url"]


def render_records(
    records: list[DataPoint],
    schema: SchemaSpec,
    passthrough_columns: tuple[str, ...] = (),
) -> str:
    """Canonical CSV text: schema fields, passthrough, provenance, source URL."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator=OUTPUT_LINE_TERMINATOR)
    writer.writerow(output_columns(schema, passthrough_columns))
    for dp in records:
        row = [canonical_string(dp.values.get(f.name), f) for f in schema.fields]
        row.extend(str(dp.passthrough.get(col, "")) for col in passthrough_columns)
        row.append(dp.origin.value)
        row.append(dp.source_url)
        writer.writerow(row)
    return buffer.getvalue()


def write_records(path, records, schema, passthrough_columns=()):
    Path(path).write_text(
        render_records(records, schema, passthrough_columns), encoding="utf-8"
    )
