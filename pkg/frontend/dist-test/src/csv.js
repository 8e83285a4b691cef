/**
 * Minimal CSV reader for the simulation artifacts.
 *
 * Files are plain comma-separated with one header row; values are numeric
 * (NaN allowed, e.g. the threshold column before t = 1).
 */
import { readFileSync } from "node:fs";
export class ColumnError extends Error {
    constructor(file, column, available) {
        super(`column '${column}' not found in ${file} (available: ${available.join(", ") || "none"})`);
        this.name = "ColumnError";
    }
}
export function readCsv(path) {
    const text = readFileSync(path, "utf-8").trim();
    if (text.length === 0) {
        throw new ColumnError(path, "<header>", []);
    }
    const lines = text.split(/\r?\n/);
    const header = lines[0].split(",").map((s) => s.trim());
    const rows = [];
    for (let i = 1; i < lines.length; i++) {
        const line = lines[i];
        if (line.trim() === "")
            continue;
        rows.push(line.split(",").map((v) => Number(v)));
    }
    return { file: path, columns: header, rows };
}
export function column(table, name) {
    const idx = table.columns.indexOf(name);
    if (idx < 0) {
        throw new ColumnError(table.file, name, table.columns);
    }
    return table.rows.map((r) => r[idx] ?? NaN);
}
export function requireColumns(table, names) {
    for (const n of names) {
        if (!table.columns.includes(n)) {
            throw new ColumnError(table.file, n, table.columns);
        }
    }
}
