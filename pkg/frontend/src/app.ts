// Page wiring: configuration form, live status table, results panel.

import { ApiError, FactlineClient, RunHandle } from "./api.js";
import { buildConfig, defaultFormState, formProblems, RunFormState, TOGGLE_NAMES } from "./form.js";
import { buildMetricsPanel } from "./metrics.js";
import {
  displayStatus,
  emptyState,
  foldEvents,
  processingCount,
  StatusState,
  terminalCounts,
} from "./statusFold.js";

const client = new FactlineClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function readForm(): RunFormState {
  const state = defaultFormState();
  const file = el<HTMLInputElement>("csv-file");
  state.fileSelected = Boolean(file.files && file.files.length);
  state.description = el<HTMLTextAreaElement>("description").value;
  state.schemaAnnotation = el<HTMLInputElement>("schema").value;
  state.providerType = el<HTMLSelectElement>("provider-type").value as "scripted" | "http";
  state.endpoint = el<HTMLInputElement>("endpoint").value;
  state.model = el<HTMLInputElement>("model").value;
  state.credential = el<HTMLInputElement>("credential").value;
  state.seed = Number(el<HTMLInputElement>("seed").value || "0");
  for (const name of TOGGLE_NAMES) {
    state.toggles[name] = el<HTMLInputElement>(`toggle-${name}`).checked;
  }
  return state;
}

function refreshFormValidity(): void {
  const problems = formProblems(readForm());
  el<HTMLButtonElement>("submit").disabled = problems.length > 0;
  el<HTMLUListElement>("form-problems").innerHTML = problems
    .map((p) => `<li>${p}</li>`)
    .join("");
}

function renderCounts(state: StatusState): void {
  const counts = terminalCounts(state);
  const parts = [
    `Processing: ${processingCount(state)}`,
    `ACCEPT: ${(counts["ACCEPT"] ?? 0) + (counts["REMEDIATED"] ?? 0)}`,
    `(remediated: ${counts["REMEDIATED"] ?? 0})`,
    `DISCOVERED: ${counts["DISCOVERED"] ?? 0}`,
    `REJECT: ${counts["REJECT"] ?? 0}`,
  ];
  el("counts").textContent = parts.join("  ");
}

function renderTable(state: StatusState): void {
  const body = el<HTMLTableSectionElement>("status-body");
  body.innerHTML = "";
  for (const rowId of state.order) {
    const row = state.rows.get(rowId);
    if (!row) continue;
    const { label, badge } = displayStatus(row);
    const tr = document.createElement("tr");
    tr.className = `status-${label.toLowerCase()}`;
    const badgeHtml = badge ? ` <span class="badge">${badge}</span>` : "";
    tr.innerHTML =
      `<td>${row.rowId}</td><td>${label}${badgeHtml}</td>` +
      `<td>${row.stage}</td><td>${row.reason ?? ""}</td>`;
    body.appendChild(tr);
  }
}

async function followRun(runId: string): Promise<void> {
  el("run-id").textContent = runId;
  el("run-view").hidden = false;
  let handle: RunHandle = await client.getRun(runId);
  render_banner(handle);

  // Reconnect loop: each (re)connection replays the full event prefix, so
  // folding from scratch always reproduces an uninterrupted client's state.
  for (;;) {
    let state = emptyState();
    try {
      for await (const event of client.streamEvents(runId)) {
        state = foldEvents([event], state);
        renderCounts(state);
        renderTable(state);
      }
      break; // stream ended normally: the run is terminal
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 1000));
    }
  }

  handle = await client.getRun(runId);
  render_banner(handle);
  if (handle.state === "DONE") {
    const report = await client.getMetrics(runId);
    const panel = buildMetricsPanel(report);
    el("metrics").innerHTML =
      `<dt>final records</dt><dd>${panel.finalRecords}</dd>` +
      `<dt>rows processed</dt><dd>${panel.rows}</dd>` +
      `<dt>total time</dt><dd>${panel.timeTotal}</dd>` +
      `<dt>mean latency</dt><dd>${panel.latencyMean}</dd>` +
      `<dt>cost</dt><dd>${panel.cost}</dd>` +
      `<dt>processing failures</dt><dd>${panel.processingFailures}</dd>`;
    const download = el<HTMLAnchorElement>("download");
    download.href = client.resultUrl(runId);
    download.removeAttribute("aria-disabled");
  } else if (handle.state === "FAILED") {
    el("failure").textContent = `Run failed: ${handle.error ?? "unknown error"}`;
  }
}

function render_banner(handle: RunHandle): void {
  el("run-state").textContent = handle.state;
  el("run-state").className = `state-${handle.state.toLowerCase()}`;
}

async function submitRun(eventObject: Event): Promise<void> {
  eventObject.preventDefault();
  const state = readForm();
  const problems = formProblems(state);
  if (problems.length) return; // submit stays disabled; belt and braces
  const fileInput = el<HTMLInputElement>("csv-file");
  const file = fileInput.files![0];
  try {
    const handle = await client.createRun(
      file,
      file.name,
      buildConfig(state),
      state.credential || undefined
    );
    el("form-problems").innerHTML = "";
    await followRun(handle.run_id);
  } catch (error) {
    const message = error instanceof ApiError ? error.message : String(error);
    el<HTMLUListElement>("form-problems").innerHTML = `<li>${message}</li>`;
  }
}

export function init(): void {
  el<HTMLFormElement>("run-form").addEventListener("submit", submitRun);
  for (const id of ["csv-file", "description", "schema", "provider-type", "endpoint", "model"]) {
    el(id).addEventListener("input", refreshFormValidity);
    el(id).addEventListener("change", refreshFormValidity);
  }
  refreshFormValidity();
}

if (typeof document !== "undefined" && document.getElementById("run-form")) {
  init();
}
