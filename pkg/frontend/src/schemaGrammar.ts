// Client-side parser for the schema annotation mini-grammar.
// Must accept exactly the strings the backend accepts (golden parity test).

export type FieldTypeName = "text" | "int" | "float" | "date";

export interface ParsedField {
  name: string;
  type: FieldTypeName | null;
}

export type ParseResult =
  | { ok: true; fields: ParsedField[] }
  | { ok: false; error: string };

const NAME_RE = /^[A-Za-z_][A-Za-z0-9_]*$/;
const TYPE_NAMES = new Set<string>(["text", "int", "float", "date"]);

export function parseSchemaAnnotation(annotation: string): ParseResult {
  if (!annotation.trim()) {
    return { ok: false, error: "empty schema annotation" };
  }
  const fields: ParsedField[] = [];
  for (const rawToken of annotation.split(",")) {
    const token = rawToken.trim();
    if (!token) {
      return { ok: false, error: "empty field entry in schema annotation" };
    }
    const colon = token.indexOf(":");
    const name = (colon === -1 ? token : token.slice(0, colon)).trim();
    if (!NAME_RE.test(name)) {
      return { ok: false, error: `invalid field name '${name}'` };
    }
    if (colon === -1) {
      fields.push({ name, type: null });
      continue;
    }
    const typeName = token.slice(colon + 1).trim().toLowerCase();
    if (!TYPE_NAMES.has(typeName)) {
      return { ok: false, error: `unknown type annotation '${typeName}'` };
    }
    fields.push({ name, type: typeName as FieldTypeName });
  }
  const seen = new Set<string>();
  for (const field of fields) {
    if (seen.has(field.name)) {
      return { ok: false, error: `duplicate field name '${field.name}'` };
    }
    seen.add(field.name);
  }
  return { ok: true, fields };
}
