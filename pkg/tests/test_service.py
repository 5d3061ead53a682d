"""HTTP service: lifecycle, streaming, downloads, validation errors."""

import asyncio
import json

import httpx
import pytest

from factline.service import create_app

pytestmark = pytest.mark.anyio


def make_client(tmp_path, **app_kwargs):
    app = create_app(data_dir=tmp_path, **app_kwargs)
    transport = httpx.ASGITransport(app=app)
    return httpx.AsyncClient(transport=transport, base_url="http://service.test")


def upload(world, **config_overrides):
    config = world.config(**config_overrides)
    return {
        "files": {"file": ("input.csv", world.input_csv().encode(), "text/csv")},
        "data": {"config": json.dumps(config.to_dict())},
    }


async def wait_done(client, run_id, timeout=15.0):
    async def poll():
        while True:
            handle = (await client.get(f"/runs/{run_id}")).json()
            if handle["state"] in ("DONE", "FAILED"):
                return handle
            await asyncio.sleep(0.02)

    return await asyncio.wait_for(poll(), timeout)


async def read_events(client, run_id):
    events = []
    async with client.stream("GET", f"/runs/{run_id}/events") as response:
        assert response.status_code == 200
        async for line in response.aiter_lines():
            if line:
                events.append(json.loads(line))
    return events


class TestLifecycle:
    async def test_create_run_and_download(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            created = await client.post("/runs", **upload(world))
            assert created.status_code == 201
            handle = created.json()
            assert handle["state"] in ("PENDING", "RUNNING")
            run_id = handle["run_id"]

            finished = await wait_done(client, run_id)
            assert finished["state"] == "DONE"

            result = await client.get(f"/runs/{run_id}/result")
            assert result.status_code == 200
            assert result.text == world.expected_csv()

            metrics = (await client.get(f"/runs/{run_id}/metrics")).json()
            assert metrics["status_counts"] == {
                "ACCEPT": 6,
                "REMEDIATED": 2,
                "REJECT": 3,
                "DISCOVERED": 1,
            }
            assert metrics["totals"]["final_records"] == 9

    async def test_event_stream_replay_and_subscriber_parity(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            run_id = (await client.post("/runs", **upload(world))).json()["run_id"]
            # Two live subscribers plus one late subscriber after completion.
            first, second = await asyncio.gather(
                read_events(client, run_id), read_events(client, run_id)
            )
            await wait_done(client, run_id)
            late = await read_events(client, run_id)
            assert first == second == late
            assert len(late) > 0
            metrics = (await client.get(f"/runs/{run_id}/metrics")).json()
            terminal = [e for e in late if e["status"] != "PROCESSING"]
            assert len(terminal) == metrics["totals"]["rows"]
            by_status = {}
            for event in terminal:
                by_status[event["status"]] = by_status.get(event["status"], 0) + 1
            assert by_status == metrics["status_counts"]

    async def test_run_isolation_and_concurrent_creates(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            responses = await asyncio.gather(
                *(client.post("/runs", **upload(world)) for _ in range(12))
            )
            run_ids = [r.json()["run_id"] for r in responses]
            assert len(set(run_ids)) == 12
            listed = (await client.get("/runs")).json()["runs"]
            assert {r["run_id"] for r in listed} >= set(run_ids)
            for run_id in run_ids:
                assert (await wait_done(client, run_id))["state"] == "DONE"

    async def test_run_directory_artifacts(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            run_id = (await client.post("/runs", **upload(world))).json()["run_id"]
            await wait_done(client, run_id)
            run_dir = tmp_path / run_id
            for name in (
                "input.csv",
                "config.json",
                "output.csv",
                "report.json",
                "events.ndjson",
                "dropped.json",
                "context.md",
            ):
                assert (run_dir / name).exists(), name
            assert any((run_dir / "snapshots").glob("*.md"))
            # The persisted event log equals the streamed one.
            lines = (run_dir / "events.ndjson").read_text().strip().splitlines()
            streamed = await read_events(client, run_id)
            assert [json.loads(line) for line in lines] == streamed

    async def test_delete_run(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            run_id = (await client.post("/runs", **upload(world))).json()["run_id"]
            await wait_done(client, run_id)
            deleted = await client.delete(f"/runs/{run_id}")
            assert deleted.json() == {"run_id": run_id, "deleted": True}
            assert (await client.get(f"/runs/{run_id}")).status_code == 404


class TestValidationAndConflicts:
    async def test_unknown_run_is_404(self, tmp_path):
        async with make_client(tmp_path) as client:
            assert (await client.get("/runs/nope")).status_code == 404
            assert (await client.get("/runs/nope/result")).status_code == 404

    async def test_duplicate_schema_field_is_422(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            payload = upload(world)
            config = json.loads(payload["data"]["config"])
            config["schema_annotation"] = "event_type,event_type"
            payload["data"]["config"] = json.dumps(config)
            response = await client.post("/runs", **payload)
            assert response.status_code == 422
            assert "event_type" in response.json()["detail"]

    async def test_config_not_json_is_422(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            payload = upload(world)
            payload["data"]["config"] = "{not json"
            assert (await client.post("/runs", **payload)).status_code == 422

    async def test_unknown_config_field_is_422(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            payload = upload(world)
            config = json.loads(payload["data"]["config"])
            config["frobnicate"] = 1
            payload["data"]["config"] = json.dumps(config)
            response = await client.post("/runs", **payload)
            assert response.status_code == 422
            assert "frobnicate" in response.json()["detail"]

    async def test_oversized_upload_is_413(self, world, tmp_path):
        async with make_client(tmp_path, max_upload_bytes=64) as client:
            response = await client.post("/runs", **upload(world))
            assert response.status_code == 413

    async def test_result_conflict_when_not_done(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            # A provider with no fixtures fails fast: FAILED, never DONE.
            run_id = (
                await client.post(
                    "/runs", **upload(world, provider={"type": "scripted", "fixtures": {}})
                )
            ).json()["run_id"]
            handle = await wait_done(client, run_id)
            assert handle["state"] == "FAILED"
            response = await client.get(f"/runs/{run_id}/result")
            assert response.status_code == 409
            assert "FAILED" in response.json()["detail"]

    async def test_ui_mount_serves_index(self, tmp_path):
        ui_dir = tmp_path / "ui"
        ui_dir.mkdir()
        (ui_dir / "index.html").write_text("<html><body>ui</body></html>")
        async with make_client(tmp_path / "data", ui_dir=ui_dir) as client:
            page = await client.get("/")
            assert page.status_code == 200
            assert "ui" in page.text
            # API routes still win over the static mount.
            assert (await client.get("/runs")).status_code == 200

    async def test_credential_never_persisted(self, world, tmp_path):
        async with make_client(tmp_path) as client:
            payload = upload(world)
            response = await client.post(
                "/runs", **payload, headers={"X-Provider-Key": "sekrit"}
            )
            run_id = response.json()["run_id"]
            assert "sekrit" not in json.dumps(response.json())
            await wait_done(client, run_id)
            config_path = tmp_path / run_id / "config.json"
            assert "sekrit" not in config_path.read_text(encoding="utf-8")
