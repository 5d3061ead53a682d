"""Run registry and per-run directories for the HTTP service.

Each run owns an isolated directory (input, config echo, snapshots, events,
outputs); run ids are never reused. Events buffer in memory for streaming and
are flushed to events.ndjson when the run finishes.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .csvio import read_rows, render_records
from .pipeline import RunConfig, build_services, execute_run

logger = logging.getLogger(__name__)

DEFAULT_MAX_UPLOAD_BYTES = 20 * 1024 * 1024


class RunState(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"


class EventBuffer:
    """Append-only event sequence with async wakeups for streamers."""

    def __init__(self):
        self.items: list[dict] = []
        self._cond = asyncio.Condition()
        self.closed = False

    def append(self, item: dict):
        self.items.append(item)
        self._schedule_notify()

    def close(self):
        self.closed = True
        self._schedule_notify()

    def _schedule_notify(self):
        try:
            asyncio.get_running_loop().create_task(self._notify())
        except RuntimeError:
            pass  # outside a loop (sync tests); nothing is waiting

    async def _notify(self):
        async with self._cond:
            self._cond.notify_all()

    async def wait_past(self, index: int):
        async with self._cond:
            await self._cond.wait_for(lambda: len(self.items) > index or self.closed)


@dataclass
class RunRecord:
    run_id: str
    state: RunState
    created_at: float
    config: RunConfig
    directory: Path
    events: EventBuffer = field(default_factory=EventBuffer)
    error: str | None = None
    report: dict | None = None
    task: asyncio.Task | None = None

    def handle(self) -> dict:
        return {
            "run_id": self.run_id,
            "state": self.state.value,
            "created_at": self.created_at,
            "config": self.config.to_dict(),
            "error": self.error,
        }


class RunManager:
    def __init__(self, base_dir, max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)
        self.max_upload_bytes = max_upload_bytes
        self._runs: dict[str, RunRecord] = {}

    def create_run(self, csv_bytes: bytes, config: RunConfig) -> RunRecord:
        run_id = f"{int(time.time())}-{uuid.uuid4().hex[:10]}"
        directory = self.base_dir / run_id
        directory.mkdir(parents=True)
        (directory / "input.csv").write_bytes(csv_bytes)
        (directory / "config.json").write_text(
            json.dumps(config.to_dict(), indent=2), encoding="utf-8"
        )
        record = RunRecord(
            run_id=run_id,
            state=RunState.PENDING,
            created_at=time.time(),
            config=config,
            directory=directory,
        )
        self._runs[run_id] = record
        record.task = asyncio.create_task(self._execute(record))
        return record

    async def _execute(self, record: RunRecord):
        record.state = RunState.RUNNING
        try:
            with open(record.directory / "input.csv", newline="", encoding="utf-8-sig") as fh:
                headers, raw_rows = read_rows(fh)
            services = build_services(
                record.config, snapshot_dir=record.directory / "snapshots"
            )
            try:
                report = await execute_run(
                    headers,
                    raw_rows,
                    record.config,
                    services=services,
                    sink=lambda event: record.events.append(event.to_dict()),
                )
            finally:
                await services.aclose()
            self._persist(record, report)
            record.report = report.to_dict()
            record.state = RunState.DONE
        except asyncio.CancelledError:
            record.state = RunState.FAILED
            record.error = "cancelled"
            raise
        except Exception as exc:  # noqa: BLE001 - surfaced via the run handle
            logger.exception("run %s failed", record.run_id)
            record.state = RunState.FAILED
            record.error = str(exc)
        finally:
            record.events.close()

    def _persist(self, record: RunRecord, report):
        directory = record.directory
        write = lambda name, text: (directory / name).write_text(text, encoding="utf-8")
        write(
            "output.csv",
            render_records(report.final_records, report.schema, report.passthrough_columns),
        )
        doc = report.to_dict()
        write("report.json", json.dumps(doc, indent=2))
        write(
            "events.ndjson",
            "".join(json.dumps(e.to_dict()) + "\n" for e in report.events),
        )
        write("dropped.json", json.dumps(doc["dropped"], indent=2))
        if report.context_markdown:
            write("context.md", report.context_markdown)

    def get(self, run_id: str) -> RunRecord | None:
        return self._runs.get(run_id)

    def list(self) -> list[RunRecord]:
        return sorted(self._runs.values(), key=lambda r: (r.created_at, r.run_id))

    async def delete(self, run_id: str) -> bool:
        record = self._runs.pop(run_id, None)
        if record is None:
            return False
        if record.task is not None and not record.task.done():
            record.task.cancel()
            try:
                await record.task
            except (asyncio.CancelledError, Exception):  # noqa: BLE001
                pass
        import shutil

        shutil.rmtree(record.directory, ignore_errors=True)
        return True

    async def stream_events(self, record: RunRecord):
        """Replay all past events, then follow until the run is terminal."""
        index = 0
        while True:
            while index < len(record.events.items):
                yield record.events.items[index]
                index += 1
            if record.events.closed and index >= len(record.events.items):
                return
            await record.events.wait_past(index)
