#!/usr/bin/env python3
"""Regenerate the frontend's golden fixtures from a real backend run.

Writes, under frontend/test/fixtures/:
  schema_grammar.json  - annotation strings with the backend parser's verdicts
  run_events.ndjson    - the event log of the standard offline fixture run
  report.json          - the matching run report

Usage: python3 scripts/export_frontend_fixtures.py
"""

import asyncio
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from factline.errors import SchemaError
from factline.pipeline import execute_run
from factline.schema import parse_schema_annotation

from conftest import FixtureWebServer  # noqa: E402
from fixture_world import PAGES, build_world  # noqa: E402

GRAMMAR_SAMPLES = [
    "a",
    "a,b",
    " a , b:int ",
    "event_type,country,affected:int,date",
    "a:text",
    "a:TEXT",
    "A_1:float",
    "x:date",
    "date",
    "_x,y_2",
    "a, b ,c:FLOAT",
    "",
    "   ",
    "a,,b",
    ",a",
    "a,",
    "a:unknown",
    "a:",
    ":int",
    "a,a",
    "bad name",
    "a-b",
    "9a",
    "a:b:c",
    "ümlaut",
    "a\t,b",
    "a :int",
    "a: int",
]


# The annotation grammar's type aliases, not the internal enum names.
_ALIAS = {"TEXT": "text", "INTEGER": "int", "FLOAT": "float", "DATE": "date"}


def grammar_fixture() -> list:
    rows = []
    for sample in GRAMMAR_SAMPLES:
        try:
            parsed = parse_schema_annotation(sample)
            rows.append(
                {
                    "input": sample,
                    "ok": True,
                    "fields": [
                        {"name": name, "type": _ALIAS[ftype.value] if ftype else None}
                        for name, ftype in parsed
                    ],
                }
            )
        except SchemaError as exc:
            rows.append({"input": sample, "ok": False, "error": str(exc)})
    return rows


async def run_fixture_world():
    server = FixtureWebServer({path: (200, html) for path, html in PAGES.items()})
    try:
        world = build_world(server.port)
        report = await execute_run(world.headers, world.raw_rows, world.config())
    finally:
        server.close()
    return report


def main():
    out_dir = ROOT / "frontend" / "test" / "fixtures"
    out_dir.mkdir(parents=True, exist_ok=True)

    (out_dir / "schema_grammar.json").write_text(
        json.dumps(grammar_fixture(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )

    report = asyncio.run(run_fixture_world())
    (out_dir / "run_events.ndjson").write_text(
        "".join(json.dumps(e.to_dict()) + "\n" for e in report.events),
        encoding="utf-8",
    )
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote fixtures to {out_dir}")
    print(f"  events: {len(report.events)}, status counts: {report.status_counts}")


if __name__ == "__main__":
    main()
