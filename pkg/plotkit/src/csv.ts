/**
 * CSV reader for opssplit tabular outputs.
 *
 * Files carry an optional leading `# config_hash: <hex>` comment, then a
 * header row, then numeric rows.
 */

import { readFileSync } from "node:fs";

export interface Table {
  columns: string[];
  rows: Record<string, number>[];
  configHash: string | null;
}

export class SchemaError extends Error {}

export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf-8");
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  let configHash: string | null = null;
  let start = 0;
  while (start < lines.length && lines[start]!.startsWith("#")) {
    const m = lines[start]!.match(/#\s*config_hash:\s*(\S+)/);
    if (m) configHash = m[1]!;
    start += 1;
  }
  if (start >= lines.length) {
    throw new SchemaError(`${path}: no header row`);
  }
  const columns = lines[start]!.split(",").map((c) => c.trim());
  const rows: Record<string, number>[] = [];
  for (const line of lines.slice(start + 1)) {
    const parts = line.split(",");
    if (parts.length !== columns.length) {
      throw new SchemaError(
        `${path}: row has ${parts.length} fields, header has ${columns.length}`
      );
    }
    const row: Record<string, number> = {};
    columns.forEach((c, i) => {
      row[c] = Number(parts[i]);
    });
    rows.push(row);
  }
  return { columns, rows, configHash };
}

/** Assert the table carries the columns a figure kind needs. */
export function requireColumns(table: Table, needed: string[], path: string): void {
  const missing = needed.filter((c) => !table.columns.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(
      `${path}: missing columns [${missing.join(", ")}]; found [${table.columns.join(", ")}]`
    );
  }
  if (table.rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
}

export function column(table: Table, name: string): number[] {
  return table.rows.map((r) => r[name]!);
}
