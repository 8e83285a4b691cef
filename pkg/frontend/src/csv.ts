/**
 * Minimal CSV reader for the simulation artifacts.
 *
 * Files are plain comma-separated with one header row; values are numeric
 * (NaN allowed, e.g. the threshold column before t = 1).
 */
import { readFileSync } from "node:fs";

export class ColumnError extends Error {
  constructor(file: string, column: string, available: string[]) {
    super(
      `column '${column}' not found in ${file} (available: ${available.join(", ") || "none"})`,
    );
    this.name = "ColumnError";
  }
}

export interface Table {
  file: string;
  columns: string[];
  rows: number[][];
}

export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf-8").trim();
  if (text.length === 0) {
    throw new ColumnError(path, "<header>", []);
  }
  const lines = text.split(/\r?\n/);
  const header = lines[0]!.split(",").map((s) => s.trim());
  const rows: number[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i]!;
    if (line.trim() === "") continue;
    rows.push(line.split(",").map((v) => Number(v)));
  }
  return { file: path, columns: header, rows };
}

export function column(table: Table, name: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new ColumnError(table.file, name, table.columns);
  }
  return table.rows.map((r) => r[idx] ?? NaN);
}

export function requireColumns(table: Table, names: string[]): void {
  for (const n of names) {
    if (!table.columns.includes(n)) {
      throw new ColumnError(table.file, n, table.columns);
    }
  }
}
