// Metrics panel values derived from the backend run report.

import type { RunReport } from "./api.js";

export interface MetricsPanel {
  finalRecords: string;
  rows: string;
  timeTotal: string;
  latencyMean: string;
  cost: string;
  processingFailures: string;
}

export function buildMetricsPanel(report: RunReport): MetricsPanel {
  const totals = report.totals;
  return {
    finalRecords: String(totals.final_records),
    rows: String(totals.rows),
    timeTotal: `${totals.time_total_s.toFixed(1)}s`,
    latencyMean: `${totals.latency_mean_s.toFixed(2)}s`,
    cost: totals.cost_total,
    processingFailures: String(totals.processing_failures),
  };
}

export function statusCountsOf(report: RunReport): Record<string, number> {
  return { ...report.status_counts };
}
