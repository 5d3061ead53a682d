// Status-table fold: purity, parity with the backend report, reconnects.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { buildMetricsPanel, statusCountsOf } from "../src/metrics.js";
import {
  applyEvent,
  displayStatus,
  emptyState,
  foldEvents,
  processingCount,
  RowEvent,
  terminalCounts,
} from "../src/statusFold.js";

function loadEvents(): RowEvent[] {
  const text = readFileSync(join(__dirname, "fixtures", "run_events.ndjson"), "utf-8");
  return text
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line) as RowEvent);
}

const report = JSON.parse(
  readFileSync(join(__dirname, "fixtures", "report.json"), "utf-8")
);

describe("fold against the backend fixture run", () => {
  const events = loadEvents();

  it("terminal counts equal the backend report exactly", () => {
    const state = foldEvents(events);
    expect(terminalCounts(state)).toEqual(statusCountsOf(report));
    expect(processingCount(state)).toBe(0);
  });

  it("shows one row per row_id", () => {
    const state = foldEvents(events);
    const distinct = new Set(events.map((event) => event.row_id));
    expect(state.rows.size).toBe(distinct.size);
    expect(state.order.length).toBe(distinct.size);
    expect(state.rows.size).toBe(report.totals.rows);
  });

  it("is a pure fold: replaying yields an identical state", () => {
    const first = foldEvents(events);
    const second = foldEvents(events);
    expect([...second.rows.entries()]).toEqual([...first.rows.entries()]);
    expect(second.order).toEqual(first.order);
  });

  it("reconnecting mid-run with full replay matches an uninterrupted client", () => {
    for (const cut of [1, Math.floor(events.length / 3), events.length - 5]) {
      // Client A watches uninterrupted; client B drops at `cut`, reconnects,
      // and re-folds the replayed stream from scratch.
      const uninterrupted = foldEvents(events);
      const beforeDrop = foldEvents(events.slice(0, cut));
      expect(beforeDrop.rows.size).toBeGreaterThan(0);
      const reconnected = foldEvents(events); // replay starts from the beginning
      expect([...reconnected.rows.entries()]).toEqual([...uninterrupted.rows.entries()]);
      expect(terminalCounts(reconnected)).toEqual(terminalCounts(uninterrupted));
    }
  });

  it("metrics panel mirrors the report totals", () => {
    const panel = buildMetricsPanel(report);
    expect(panel.finalRecords).toBe(String(report.totals.final_records));
    expect(panel.rows).toBe(String(report.totals.rows));
    expect(panel.cost).toBe(report.totals.cost_total);
    expect(panel.timeTotal).toBe(`${report.totals.time_total_s.toFixed(1)}s`);
    expect(panel.latencyMean).toBe(`${report.totals.latency_mean_s.toFixed(2)}s`);
  });
});

describe("fold rules", () => {
  const base: RowEvent = {
    row_id: "r1",
    stage: "ingest",
    status: "PROCESSING",
    reason: null,
    timestamp: 1,
  };

  it("status never regresses after a terminal event", () => {
    let state = emptyState();
    state = applyEvent(state, base);
    state = applyEvent(state, { ...base, stage: "arbiter", status: "ACCEPT", timestamp: 2 });
    state = applyEvent(state, { ...base, stage: "late", status: "PROCESSING", timestamp: 3 });
    const row = state.rows.get("r1")!;
    expect(row.status).toBe("ACCEPT");
    expect(row.terminal).toBe(true);
  });

  it("empty stream folds to an empty table", () => {
    const state = foldEvents([]);
    expect(state.rows.size).toBe(0);
    expect(terminalCounts(state)).toEqual({});
  });

  it("remediated rows display as ACCEPT with a badge", () => {
    let state = emptyState();
    state = applyEvent(state, { ...base, status: "REMEDIATED" });
    const shown = displayStatus(state.rows.get("r1")!);
    expect(shown).toEqual({ label: "ACCEPT", badge: "remediated" });
  });

  it("processing rows display with the mixed-case label", () => {
    let state = emptyState();
    state = applyEvent(state, base);
    expect(displayStatus(state.rows.get("r1")!).label).toBe("Processing");
  });
});
