"""CLI thin client: exit codes, artifacts, parity with the HTTP path."""

import json

import pytest
from click.testing import CliRunner

from factline.cli import main
from fixture_world import PRICING, SCHEMA_ANNOTATION, DESCRIPTION


@pytest.fixture
def workspace(tmp_path, world):
    (tmp_path / "input.csv").write_text(world.input_csv(), encoding="utf-8")
    (tmp_path / "fixtures.json").write_text(json.dumps(world.fixtures), encoding="utf-8")
    (tmp_path / "search.json").write_text(json.dumps(world.search_results), encoding="utf-8")
    (tmp_path / "pricing.json").write_text(json.dumps(PRICING), encoding="utf-8")
    return tmp_path


def base_args(workspace, extra=()):
    return [
        "run",
        str(workspace / "input.csv"),
        "--description", DESCRIPTION,
        "--schema", SCHEMA_ANNOTATION,
        "--fixtures", str(workspace / "fixtures.json"),
        "--search-fixtures", str(workspace / "search.json"),
        "--pricing", str(workspace / "pricing.json"),
        "--seed", "42",
        "--politeness", "0",
        "--out", str(workspace / "out.csv"),
        "--report", str(workspace / "report.json"),
        *extra,
    ]


def test_run_writes_expected_csv(workspace, world):
    runner = CliRunner()
    result = runner.invoke(main, base_args(workspace))
    assert result.exit_code == 0, result.output
    assert (workspace / "out.csv").read_text(encoding="utf-8") == world.expected_csv()
    report = json.loads((workspace / "report.json").read_text(encoding="utf-8"))
    assert report["status_counts"]["ACCEPT"] == 6
    # Live status log reached stdout.
    assert "REMEDIATED" in result.output


def test_missing_input_is_usage_error(workspace):
    runner = CliRunner()
    args = base_args(workspace)
    args[1] = str(workspace / "nope.csv")
    result = runner.invoke(main, args)
    assert result.exit_code == 2


def test_unknown_flag_is_usage_error(workspace):
    runner = CliRunner()
    result = runner.invoke(main, base_args(workspace, ["--frobnicate"]))
    assert result.exit_code == 2


def test_rules_mode_has_zero_provider_calls(workspace):
    runner = CliRunner()
    result = runner.invoke(main, base_args(workspace, ["--mode", "rules", "--quiet"]))
    assert result.exit_code == 0, result.output
    report = json.loads((workspace / "report.json").read_text(encoding="utf-8"))
    assert report["usage"]["calls"] == 0
    assert report["fetches"] == []


def test_failed_run_exits_one(workspace):
    (workspace / "empty.json").write_text("{}", encoding="utf-8")
    runner = CliRunner()
    args = base_args(workspace)
    args[args.index("--fixtures") + 1] = str(workspace / "empty.json")
    result = runner.invoke(main, args)
    assert result.exit_code == 1


def test_disable_toggle_flows_through(workspace):
    runner = CliRunner()
    result = runner.invoke(
        main, base_args(workspace, ["--disable", "remediation", "--quiet"])
    )
    assert result.exit_code == 0, result.output
    report = json.loads((workspace / "report.json").read_text(encoding="utf-8"))
    assert report["status_counts"]["REJECT"] == 5
    assert report["totals"]["final_records"] == 7


def test_compare_command(workspace, world):
    (workspace / "gt.csv").write_text(world.ground_truth_csv(), encoding="utf-8")
    (workspace / "configs.json").write_text(
        json.dumps(
            [{"name": "baseline"}, {"name": "no_remediation", "ablation": "no_remediation"}]
        ),
        encoding="utf-8",
    )
    runner = CliRunner()
    args = [
        "compare",
        str(workspace / "input.csv"),
        "--description", DESCRIPTION,
        "--schema", SCHEMA_ANNOTATION,
        "--fixtures", str(workspace / "fixtures.json"),
        "--search-fixtures", str(workspace / "search.json"),
        "--politeness", "0",
        "--gt", str(workspace / "gt.csv"),
        "--configs", str(workspace / "configs.json"),
        "--out", str(workspace / "cmp"),
    ]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    comparison = json.loads((workspace / "cmp" / "comparison.json").read_text())
    by_name = {row["name"]: row for row in comparison["rows"]}
    assert by_name["no_remediation"]["delta"]["recall"] < 0
    assert (workspace / "cmp" / "comparison.png").exists()
