// Run-configuration form state and validation (pure; DOM wiring lives in app.ts).

import { parseSchemaAnnotation } from "./schemaGrammar.js";

export interface RunFormState {
  fileSelected: boolean;
  description: string;
  schemaAnnotation: string;
  providerType: "scripted" | "http";
  endpoint: string;
  model: string;
  credential: string;
  seed: number;
  parallelism: number;
  toggles: Record<string, boolean>;
}

export const TOGGLE_NAMES = [
  "relevancy",
  "layout",
  "source_scrutiny",
  "fact_check",
  "context",
  "context_examples",
  "remediation",
  "discovery",
  "integrity",
  "formatter",
] as const;

export function defaultFormState(): RunFormState {
  const toggles: Record<string, boolean> = {};
  for (const name of TOGGLE_NAMES) toggles[name] = true;
  return {
    fileSelected: false,
    description: "",
    schemaAnnotation: "",
    providerType: "http",
    endpoint: "",
    model: "",
    credential: "",
    seed: 0,
    parallelism: 4,
    toggles,
  };
}

export function formProblems(state: RunFormState): string[] {
  const problems: string[] = [];
  if (!state.fileSelected) problems.push("choose a CSV file");
  if (!state.description.trim()) problems.push("describe the dataset");
  if (!state.schemaAnnotation.trim()) {
    problems.push("list the schema fields");
  } else {
    const parsed = parseSchemaAnnotation(state.schemaAnnotation);
    if (!parsed.ok) problems.push(`schema: ${parsed.error}`);
  }
  if (state.providerType === "http") {
    if (!state.endpoint.trim()) problems.push("provider endpoint is required");
    if (!state.model.trim()) problems.push("model id is required");
  }
  return problems;
}

export function canSubmit(state: RunFormState): boolean {
  return formProblems(state).length === 0;
}

// The credential travels only in the X-Provider-Key header, never in config.
export function buildConfig(state: RunFormState): Record<string, unknown> {
  const provider =
    state.providerType === "http"
      ? { type: "http", endpoint: state.endpoint.trim(), model: state.model.trim() }
      : { type: "scripted", fixtures: {} };
  return {
    schema_annotation: state.schemaAnnotation.trim(),
    dataset_description: state.description.trim(),
    provider,
    seed: state.seed,
    parallelism: state.parallelism,
    toggles: { ...state.toggles },
  };
}
