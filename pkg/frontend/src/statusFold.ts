// Pure fold of the run's event stream into the status table state.
// Replaying the same event log always yields the same state, which is what
// makes reconnect-with-full-replay safe.

export interface RowEvent {
  row_id: string;
  stage: string;
  status: string;
  reason: string | null;
  timestamp: number;
}

export const TERMINAL_STATUSES = ["ACCEPT", "REJECT", "REMEDIATED", "DISCOVERED"] as const;

export interface StatusRow {
  rowId: string;
  status: string;
  stage: string;
  reason: string | null;
  updatedAt: number;
  terminal: boolean;
}

export interface StatusState {
  rows: Map<string, StatusRow>;
  order: string[]; // first-seen order, stable across replays
}

export function emptyState(): StatusState {
  return { rows: new Map(), order: [] };
}

function isTerminal(status: string): boolean {
  return (TERMINAL_STATUSES as readonly string[]).includes(status);
}

export function applyEvent(state: StatusState, event: RowEvent): StatusState {
  const rows = new Map(state.rows);
  const existing = rows.get(event.row_id);
  const order = existing ? state.order : [...state.order, event.row_id];
  if (existing && existing.terminal) {
    // A terminal status never regresses to Processing.
    return { rows, order };
  }
  rows.set(event.row_id, {
    rowId: event.row_id,
    status: event.status,
    stage: event.stage,
    reason: event.reason ?? null,
    updatedAt: event.timestamp,
    terminal: isTerminal(event.status),
  });
  return { rows, order };
}

export function foldEvents(events: RowEvent[], from: StatusState = emptyState()): StatusState {
  let state = from;
  for (const event of events) {
    state = applyEvent(state, event);
  }
  return state;
}

export function terminalCounts(state: StatusState): Record<string, number> {
  const counts: Record<string, number> = {};
  for (const row of state.rows.values()) {
    if (row.terminal) {
      counts[row.status] = (counts[row.status] ?? 0) + 1;
    }
  }
  return counts;
}

export function processingCount(state: StatusState): number {
  let n = 0;
  for (const row of state.rows.values()) {
    if (!row.terminal) n += 1;
  }
  return n;
}

// Display policy: remediated rows render as ACCEPT with a badge, keeping the
// four displayed statuses while preserving provenance.
export function displayStatus(row: StatusRow): { label: string; badge: string | null } {
  if (row.status === "REMEDIATED") {
    return { label: "ACCEPT", badge: "remediated" };
  }
  if (row.status === "PROCESSING") {
    return { label: "Processing", badge: null };
  }
  return { label: row.status, badge: null };
}
