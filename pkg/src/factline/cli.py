"""Command-line surface: run (thin service client), serve, compare.

``run`` drives the same HTTP API the web UI uses. Without --server it mounts
the service in-process over an ASGI transport, so offline runs never open a
socket; with --server it talks to a running instance.
"""

from __future__ import annotations

import asyncio
import json
import sys
import tempfile
from pathlib import Path

import click
import httpx

from .pipeline import ABLATIONS, Mode, RunConfig, Toggles
from .service import create_app

TOGGLE_NAMES = sorted(Toggles().to_dict())


def _build_config(
    description,
    schema_annotation,
    mode,
    provider_type,
    endpoint,
    model,
    fixtures,
    search_fixtures,
    search_template,
    pricing,
    rulepack,
    seed,
    parallelism,
    disabled,
    ablation,
    url_column,
    politeness,
    replay_snapshots,
) -> RunConfig:
    if provider_type == "http":
        if not endpoint or not model:
            raise click.UsageError("--provider-type http requires --endpoint and --model")
        provider = {"type": "http", "endpoint": endpoint, "model": model}
    else:
        provider = {"type": "scripted"}
        if fixtures:
            provider["fixtures"] = json.loads(Path(fixtures).read_text(encoding="utf-8"))
        else:
            provider["fixtures"] = {}
    if search_template:
        search = {"type": "http", "url_template": search_template}
    elif search_fixtures:
        search = {
            "type": "fixture",
            "results": json.loads(Path(search_fixtures).read_text(encoding="utf-8")),
        }
    else:
        search = {"type": "fixture", "results": {}}
    toggles = Toggles(**{name: name not in disabled for name in TOGGLE_NAMES})
    config = RunConfig(
        schema_annotation=schema_annotation,
        dataset_description=description,
        url_column=url_column,
        provider=provider,
        search=search,
        pricing=json.loads(Path(pricing).read_text(encoding="utf-8")) if pricing else {},
        rulepack=json.loads(Path(rulepack).read_text(encoding="utf-8")) if rulepack else {},
        seed=seed,
        parallelism=parallelism,
        mode=Mode(mode.upper()),
        toggles=toggles,
        per_host_interval=politeness,
        replay_snapshots=replay_snapshots,
    )
    if ablation:
        config = config.apply_ablation(ablation)
    return config


def shared_run_options(command):
    options = [
        click.option("--description", required=True, help="Dataset purpose statement."),
        click.option(
            "--schema",
            "schema_annotation",
            required=True,
            help="Comma-separated fields: name or name:type (text,int,float,date).",
        ),
        click.option("--mode", default="committee", show_default=True,
                      type=click.Choice(["committee", "monolith", "rules"], case_sensitive=False)),
        click.option("--provider-type", default="scripted", show_default=True,
                      type=click.Choice(["scripted", "http"])),
        click.option("--endpoint", default=None, help="Chat-completions URL for --provider-type http."),
        click.option("--model", default=None, help="Model id for --provider-type http."),
        click.option("--fixtures", type=click.Path(exists=True, dir_okay=False), default=None,
                      help="Scripted-provider fixture JSON."),
        click.option("--search-fixtures", type=click.Path(exists=True, dir_okay=False), default=None),
        click.option("--search-template", default=None, help="Search URL template with {query}."),
        click.option("--pricing", type=click.Path(exists=True, dir_okay=False), default=None),
        click.option("--rulepack", type=click.Path(exists=True, dir_okay=False), default=None),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--parallelism", type=int, default=4, show_default=True),
        click.option("--disable", "disabled", multiple=True, type=click.Choice(TOGGLE_NAMES),
                      help="Turn an agent off (repeatable)."),
        click.option("--ablation", type=click.Choice(sorted(ABLATIONS)), default=None),
        click.option("--url-column", default="source_url", show_default=True),
        click.option("--politeness", type=float, default=1.0, show_default=True,
                      help="Minimum seconds between fetches per host."),
        click.option("--replay-snapshots", type=click.Path(exists=True, file_okay=False), default=None,
                      help="Serve pages from this snapshot directory instead of the network."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group()
def main():
    """Validate, remediate and augment web-sourced tabular datasets."""


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@shared_run_options
@click.option("--out", "output_path", type=click.Path(dir_okay=False), default="output.csv",
              show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--server", default=None, help="URL of a running service; default is in-process.")
@click.option("--quiet", is_flag=True, help="Suppress the live status log.")
def run(input_path, output_path, report_path, server, quiet, **config_kwargs):
    """Run the pipeline on INPUT_PATH and write the validated CSV."""
    config = _build_config(**config_kwargs)
    code = asyncio.run(
        _run_via_service(Path(input_path), config, Path(output_path),
                         Path(report_path) if report_path else None, server, quiet)
    )
    sys.exit(code)


async def _run_via_service(input_path, config, output_path, report_path, server, quiet) -> int:
    if server:
        client = httpx.AsyncClient(base_url=server, timeout=None)
    else:
        app = create_app(data_dir=tempfile.mkdtemp(prefix="factline-cli-"))
        client = httpx.AsyncClient(
            transport=httpx.ASGITransport(app=app),
            base_url="http://factline.local",
            timeout=None,
        )
    async with client:
        response = await client.post(
            "/runs",
            files={"file": (input_path.name, input_path.read_bytes(), "text/csv")},
            data={"config": json.dumps(config.to_dict())},
        )
        if response.status_code != 201:
            click.echo(f"error: {response.json().get('detail', response.text)}", err=True)
            return 1
        run_id = response.json()["run_id"]
        if not quiet:
            click.echo(f"run {run_id}")

        async with client.stream("GET", f"/runs/{run_id}/events") as stream:
            async for line in stream.aiter_lines():
                if not line:
                    continue
                if not quiet:
                    event = json.loads(line)
                    reason = f"  {event['reason']}" if event.get("reason") else ""
                    click.echo(
                        f"{event['row_id']:<14} {event['stage']:<18} {event['status']}{reason}"
                    )

        handle = (await client.get(f"/runs/{run_id}")).json()
        if handle["state"] != "DONE":
            click.echo(f"run failed: {handle.get('error')}", err=True)
            return 1

        result = await client.get(f"/runs/{run_id}/result")
        output_path.write_text(result.text, encoding="utf-8")
        metrics = (await client.get(f"/runs/{run_id}/metrics")).json()
        if report_path:
            report_path.write_text(json.dumps(metrics, indent=2), encoding="utf-8")
        totals = metrics["totals"]
        click.echo(
            f"done: {totals['final_records']} records -> {output_path} "
            f"(cost {totals['cost_total']}, {totals['time_total_s']}s)"
        )
    return 0


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8800, show_default=True)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None,
              help="Directory for run artifacts (default: a temp dir).")
@click.option("--ui", "ui_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Serve the built browser UI from this directory at /.")
def serve(host, port, data_dir, ui_dir):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run(create_app(data_dir=data_dir, ui_dir=ui_dir), host=host, port=port)


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@shared_run_options
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Ground-truth CSV (same schema columns; optional remediable marker).")
@click.option("--configs", "configs_path", type=click.Path(exists=True, dir_okay=False),
              default=None,
              help='JSON list like [{"name": "baseline"}, {"name": "x", "ablation": "no_layout"}].')
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="comparison",
              show_default=True)
def compare(input_path, gt_path, configs_path, out_dir, **config_kwargs):
    """Evaluate one or more configurations against a ground truth."""
    from .csvio import read_rows
    from .evaluation import GroundTruth, run_comparison
    from .schema import generate_schema

    base_config = _build_config(**config_kwargs)
    entries = [{"name": "baseline"}]
    if configs_path:
        entries = json.loads(Path(configs_path).read_text(encoding="utf-8"))
    configs = []
    for entry in entries:
        config = RunConfig.from_dict({**base_config.to_dict(), **entry.get("overrides", {})})
        if entry.get("ablation"):
            config = config.apply_ablation(entry["ablation"])
        configs.append((entry["name"], config))

    headers, raw_rows = read_rows(input_path)
    schema = generate_schema(
        base_config.schema_annotation, raw_rows, base_config.dataset_description
    )
    gt = GroundTruth.from_csv(gt_path, schema)
    comparison = asyncio.run(
        run_comparison(headers, raw_rows, gt, configs, out_dir=out_dir)
    )
    click.echo((Path(out_dir) / "comparison.txt").read_text(encoding="utf-8"))
    failed = [row["name"] for row in comparison["rows"] if row.get("failed")]
    if failed:
        click.echo(f"failed runs: {', '.join(failed)}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
