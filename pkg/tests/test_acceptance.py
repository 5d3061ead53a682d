"""The acceptance gate: one marked block per criterion, timed where required.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
pass/fail line per criterion.
"""

import io
import itertools
import random
import time
from urllib.parse import urlsplit

import pytest

from factline.csvio import render_records
from factline.errors import UncoercibleValue
from factline.evaluation import (
    GroundTruth,
    compute_metrics,
    f1_from,
    match_records,
    round1,
)
from factline.finalize import dedup
from factline.gateway import AgentKind
from factline.pipeline import Mode, execute_run
from factline.schema import (
    DataPoint,
    FieldSpec,
    FieldType,
    SchemaSpec,
    coerce_record,
    generate_schema,
    normalize_date,
    validate_record,
)
from factline.validators import (
    Decision,
    FactCheckReport,
    RejectReason,
    Reliability,
    SourceAssessment,
    arbitrate,
)
from dedup_oracle import brute_force, random_instance
from fixture_world import EXPECTED_STATUSES

pytestmark = pytest.mark.anyio

DISASTER_SCHEMA = generate_schema("event_type,country,affected:int,date", [], "events")


# --------------------------------------------------------------------------
# Criterion 1: F1 arithmetic against the externally reported metric triples.
# --------------------------------------------------------------------------

# Reported (P, R, F1) rows used to validate the harness's F1 arithmetic.
REPORTED_TRIPLES = [
    ("committee-small", 92.7, 78.7, 85.1),
    ("committee-mid", 92.7, 61.7, 74.1),
    ("committee-large", 100.0, 66.7, 79.7),
    ("monolith", 89.5, 58.9, 71.0),
    ("rules", 92.4, 58.2, 71.4),
    ("ablation-baseline", 92.7, 78.7, 85.1),
    ("no_fact_check", 92.4, 76.6, 83.8),
    ("no_context", 93.0, 74.5, 82.7),
    ("no_ctx_examples", 95.3, 71.6, 81.8),
    ("rem_only", 95.3, 70.9, 81.3),
    ("no_integrity", 90.5, 73.8, 81.3),
    ("no_src_scrutiny", 91.4, 73.0, 81.2),
    ("no_ctx_learning", 92.8, 71.6, 80.8),
    ("no_remediation", 95.9, 66.7, 78.7),
    ("no_layout", 94.1, 67.4, 78.5),
    ("discovery_only", 96.0, 66.0, 78.2),
    ("min_fact_check", 83.6, 65.2, 73.3),
    ("no_relevancy", 78.9, 68.1, 73.1),
    ("no_formatter", 92.1, 41.1, 56.9),
]


@pytest.mark.acceptance(1, "F1 arithmetic matches every reported (P, R, F1) triple")
@pytest.mark.parametrize("name,p,r,f1", REPORTED_TRIPLES, ids=[t[0] for t in REPORTED_TRIPLES])
def test_c1_f1_arithmetic(name, p, r, f1):
    started = time.monotonic()
    assert abs(f1_from(p, r) - f1) <= 0.05
    assert time.monotonic() - started < 1.0


@pytest.mark.acceptance(1, "F1 arithmetic matches every reported (P, R, F1) triple")
def test_c1_rounding_matches_reporting_convention():
    assert round1(f1_from(92.7, 78.7)) == 85.1
    assert round1(f1_from(95.9, 66.7)) == 78.7


# --------------------------------------------------------------------------
# Criterion 2: exhaustive Arbiter truth table.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(2, "Arbiter truth table over all 20 outcomes")
def test_c2_arbiter_truth_table():
    started = time.monotonic()
    combos = list(itertools.product([True, False], [True, False], list(Reliability)))
    assert len(combos) == 20
    for content, supports, reliability in combos:
        verdict = arbitrate(
            FactCheckReport(content, supports, None, "n"),
            SourceAssessment("t", reliability, ""),
        )
        reject_conditions = [
            (not content, RejectReason.NO_MEANINGFUL_CONTENT),
            (not supports, RejectReason.CLAIMS_UNSUPPORTED),
            (
                reliability in (Reliability.LOW, Reliability.VERY_LOW),
                RejectReason.UNRELIABLE_SOURCE,
            ),
        ]
        expected = tuple(reason for hit, reason in reject_conditions if hit)
        assert verdict.reasons == expected
        assert (verdict.decision == Decision.ACCEPT) == (not expected)
    assert time.monotonic() - started < 1.0


# --------------------------------------------------------------------------
# Criterion 3: dedup equals the brute-force reference on 1,000 instances.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(3, "hierarchical dedup equals the O(n^2) reference")
def test_c3_dedup_oracle_equivalence():
    started = time.monotonic()
    dated = generate_schema("event,country,date", [], "events")
    undated = generate_schema("event,country", [], "events")
    rng = random.Random(20240814)
    for index in range(1000):
        schema = dated if index % 4 else undated
        records = random_instance(rng, schema)
        kept, _ = dedup(records, schema)
        assert [r.row_id for r in kept] == [r.row_id for r in brute_force(records, schema)]
    assert time.monotonic() - started < 10.0


@pytest.mark.acceptance(3, "hierarchical dedup equals the O(n^2) reference")
def test_c3_named_precision_cases():
    schema = generate_schema("event,country,date", [], "events")

    def dp(date, row_id):
        return DataPoint(row_id, {"event": "quake", "country": "HT", "date": date}, "http://h.test/")

    # Month- and day-precision records for one fingerprint coexist.
    kept, _ = dedup([dp("2024-03-05", "day"), dp("2024-03", "month")], schema)
    assert [r.row_id for r in kept] == ["day", "month"]
    # An exact day repeat is a duplicate.
    kept, dropped = dedup([dp("2024-03-05", "a"), dp("2024-03-05", "b")], schema)
    assert [r.row_id for r in kept] == ["a"] and len(dropped) == 1
    # Distinct days coexist.
    kept, _ = dedup([dp("2024-03-05", "a"), dp("2024-03-12", "b")], schema)
    assert len(kept) == 2
    # Without a date field, identical rows keep only the first instance.
    undated = generate_schema("event,country", [], "events")
    rows = [
        DataPoint("first", {"event": "quake", "country": "HT"}, "http://h.test/"),
        DataPoint("second", {"event": "quake", "country": "HT"}, "http://h.test/"),
    ]
    kept, _ = dedup(rows, undated)
    assert [r.row_id for r in kept] == ["first"]


# --------------------------------------------------------------------------
# Criterion 4: end-to-end scripted fixture, byte-exact output, no egress.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(4, "end-to-end scripted fixture run")
async def test_c4_end_to_end_fixture(world):
    started = time.monotonic()
    report = await execute_run(world.headers, world.raw_rows, world.config())
    elapsed = time.monotonic() - started
    assert elapsed < 10.0

    statuses = {row_id: o["status"] for row_id, o in report.outcomes.items()}
    assert statuses == EXPECTED_STATUSES
    assert report.status_counts == {
        "ACCEPT": 6,
        "REMEDIATED": 2,
        "DISCOVERED": 1,
        "REJECT": 3,
    }

    # One DIRECT_REPLACEMENT and one CALCULATION remediation.
    assert report.outcomes["r10"]["status"] == "REMEDIATED"
    assert report.outcomes["r11"]["status"] == "REMEDIATED"
    by_id = {dp.row_id: dp for dp in report.final_records}
    assert by_id["r10"].values["country"] == "Cameroon"
    assert by_id["r11"].values["affected"] == 480000

    # The three rejects carry the expected reasons.
    assert "NOT_RELEVANT" in report.outcomes["r7"]["reason"]
    assert "NO_MEANINGFUL_CONTENT" in report.outcomes["r8"]["reason"]
    assert "UNRELIABLE_SOURCE" in report.outcomes["r9"]["reason"]

    # The irrelevant row triggered no fetch and no fact-check.
    fetched_paths = {urlsplit(f.url).path for f in report.fetches}
    assert "/gossip" not in fetched_paths
    assert all(
        e.key != "r7" for e in report.ledger_entries if e.kind == AgentKind.FACT_CHECK
    )

    # Zero network egress: every fetch stayed on the loopback fixture server.
    assert report.fetches, "the run must actually fetch pages"
    for record in report.fetches:
        assert urlsplit(record.url).hostname in ("localhost", "127.0.0.1")

    # Final CSV matches the hand-traced expectation byte for byte.
    got = render_records(report.final_records, report.schema, report.passthrough_columns)
    assert got == world.expected_csv()


# --------------------------------------------------------------------------
# Criterion 5: parallelism invariance.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(5, "parallelism 1 vs 8 yields identical results")
async def test_c5_parallelism_invariance(world):
    snapshots = {}
    for parallelism in (1, 8):
        report = await execute_run(
            world.headers, world.raw_rows, world.config(parallelism=parallelism)
        )
        snapshots[parallelism] = {
            "csv": render_records(
                report.final_records, report.schema, report.passthrough_columns
            ),
            "statuses": {r: o["status"] for r, o in report.outcomes.items()},
            "cost": report.cost_total,
        }
    assert snapshots[1] == snapshots[8]
    assert snapshots[1]["cost"] > 0


# --------------------------------------------------------------------------
# Criterion 6: ablation mechanics on the fixture.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(6, "ablation mechanics: no_remediation and no_relevancy")
async def test_c6_no_remediation_loses_exactly_the_remediated_rows(world):
    gt = GroundTruth.from_csv(io.StringIO(world.ground_truth_csv()), DISASTER_SCHEMA)

    baseline = await execute_run(world.headers, world.raw_rows, world.config())
    ablated = await execute_run(
        world.headers, world.raw_rows, world.config().apply_ablation("no_remediation")
    )

    base_ids = {dp.row_id for dp in baseline.final_records}
    ablated_ids = {dp.row_id for dp in ablated.final_records}
    assert base_ids - ablated_ids == {"r10", "r11"}
    assert ablated_ids <= base_ids

    base_metrics = compute_metrics(
        match_records(baseline.final_records, gt.records, baseline.schema),
        {"r10", "r11"},
        gt,
    )
    ablated_metrics = compute_metrics(
        match_records(ablated.final_records, gt.records, ablated.schema), set(), gt
    )
    # Recall drops; precision does not decrease (sign agreement with the
    # reported no-remediation deltas: R negative, P non-negative).
    assert ablated_metrics.recall < base_metrics.recall
    assert ablated_metrics.precision >= base_metrics.precision
    assert base_metrics.remediation_recall == 100.0
    assert ablated_metrics.remediation_recall == 0.0


@pytest.mark.acceptance(6, "ablation mechanics: no_remediation and no_relevancy")
async def test_c6_no_relevancy_fetches_the_irrelevant_row(world):
    gt = GroundTruth.from_csv(io.StringIO(world.ground_truth_csv()), DISASTER_SCHEMA)
    baseline = await execute_run(world.headers, world.raw_rows, world.config())
    ablated = await execute_run(
        world.headers, world.raw_rows, world.config().apply_ablation("no_relevancy")
    )
    baseline_paths = {urlsplit(f.url).path for f in baseline.fetches}
    ablated_paths = {urlsplit(f.url).path for f in ablated.fetches}
    assert "/gossip" not in baseline_paths
    assert "/gossip" in ablated_paths

    # The leaked off-topic row drags precision down (sign agreement with the
    # reported no-relevancy delta: P negative).
    base_metrics = compute_metrics(
        match_records(baseline.final_records, gt.records, baseline.schema), set(), gt
    )
    ablated_metrics = compute_metrics(
        match_records(ablated.final_records, gt.records, ablated.schema), set(), gt
    )
    assert ablated_metrics.precision < base_metrics.precision


# --------------------------------------------------------------------------
# Criterion 7: formatter and normalizer property fuzz (10,000 records).
# --------------------------------------------------------------------------

MONTH_NAMES = [
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
]

FUZZ_SCHEMA = SchemaSpec(
    fields=(
        FieldSpec("label", FieldType.TEXT),
        FieldSpec("count", FieldType.INTEGER),
        FieldSpec("rate", FieldType.FLOAT),
        FieldSpec("date", FieldType.DATE),
    ),
)


def _random_value(rng, ftype):
    roll = rng.random()
    if roll < 0.15:
        return rng.choice(["junk value", "$5", "n/a", "12th of never", ""])
    if ftype == FieldType.INTEGER:
        n = rng.randint(-10**9, 10**9)
        return rng.choice([str(n), f" {n:,} ", n])
    if ftype == FieldType.FLOAT:
        x = rng.uniform(-1e6, 1e6)
        return rng.choice([f"{x:.4f}", f" {x:,.2f} ", x])
    if ftype == FieldType.DATE:
        return _random_date_string(rng)[0]
    return rng.choice([" padded text ", "Plain", "Ünïcode näme", "x" * 40])


def _random_date_string(rng):
    year = rng.randint(1700, 2399)
    month = rng.randint(1, 12)
    day = rng.randint(1, 28)
    name = MONTH_NAMES[month - 1]
    forms = [
        (f"{year:04d}-{month:02d}-{day:02d}", "DAY"),
        (f"{name} {day}, {year}", "DAY"),
        (f"{day} {name} {year}", "DAY"),
        (f"{year:04d}-{month:02d}", "MONTH"),
        (f"{name} {year}", "MONTH"),
        (f"{year:04d}", "YEAR"),
    ]
    if day > 12 or day == month:
        forms.append((f"{month:02d}/{day:02d}/{year}", "DAY"))
    return rng.choice(forms)


@pytest.mark.acceptance(7, "formatter/normalizer properties over 10,000 fuzzed records")
def test_c7_formatter_properties_fuzz():
    started = time.monotonic()
    rng = random.Random(7_000_000)
    coerced_ok = 0
    for index in range(10_000):
        record = DataPoint(
            row_id=f"f{index}",
            values={f.name: _random_value(rng, f.field_type) for f in FUZZ_SCHEMA.fields},
            source_url="http://fuzz.test/p",
        )
        try:
            once = coerce_record(record, FUZZ_SCHEMA)
        except UncoercibleValue:
            continue
        coerced_ok += 1
        twice = coerce_record(once, FUZZ_SCHEMA)
        assert twice.values == once.values  # idempotence
        assert validate_record(once, FUZZ_SCHEMA) == []

        # Date precision preservation on a fresh sample each round.
        text, expected = _random_date_string(rng)
        parsed = normalize_date(text)
        assert parsed.precision.value == expected
        assert normalize_date(parsed.canonical) == parsed

        # Schema serialization round-trip with shuffled structure.
        names = rng.sample(["alpha", "beta", "gamma", "date"], k=rng.randint(1, 4))
        schema = SchemaSpec(
            fields=tuple(
                FieldSpec(
                    name,
                    rng.choice(list(FieldType)) if name != "date" else FieldType.DATE,
                    required=rng.random() < 0.8,
                )
                for name in names
            ),
            dataset_description="fuzz",
        )
        assert SchemaSpec.from_dict(schema.to_dict()) == schema
    elapsed = time.monotonic() - started
    assert coerced_ok > 2000, "fuzzer must exercise the success path"
    assert elapsed < 30.0


# --------------------------------------------------------------------------
# Criterion 8: baseline transcript discipline.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(8, "monolith: one call per row; rules: zero calls, zero fetches")
async def test_c8_monolith_one_call_per_row(world):
    report = await execute_run(
        world.headers, world.raw_rows, world.config(mode=Mode.MONOLITH)
    )
    assert len(report.ledger_entries) == len(world.raw_rows)
    assert all(e.kind == AgentKind.MONOLITH for e in report.ledger_entries)
    assert sorted(e.key for e in report.ledger_entries) == sorted(
        f"r{i + 1}" for i in range(len(world.raw_rows))
    )


@pytest.mark.acceptance(8, "monolith: one call per row; rules: zero calls, zero fetches")
async def test_c8_rules_zero_calls_zero_fetches(world):
    report = await execute_run(world.headers, world.raw_rows, world.config(mode=Mode.RULES))
    assert report.ledger_entries == []
    assert report.fetches == []
    assert len(report.final_records) > 0


# --------------------------------------------------------------------------
# Criterion 9 (secondary): UI parity suite, bridged from the frontend tests.
# --------------------------------------------------------------------------

@pytest.mark.acceptance(9, "UI parity suite (frontend vitest) passes")
def test_c9_frontend_suite():
    import shutil
    import subprocess
    from pathlib import Path

    frontend = Path(__file__).resolve().parent.parent / "frontend"
    npx = shutil.which("npx")
    if npx is None or not (frontend / "node_modules").exists():
        pytest.skip("frontend toolchain not installed")
    result = subprocess.run(
        [npx, "vitest", "run"],
        cwd=frontend,
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert result.returncode == 0, result.stdout + result.stderr
