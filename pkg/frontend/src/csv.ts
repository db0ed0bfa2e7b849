/** Versioned-CSV loading for the harness's metric, summary and curve files. */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export type Row = Record<string, string>;

export class SchemaError extends Error {}

export interface Table {
  file: string;
  rows: Row[];
}

/** Parse one CSV file and require the named columns (plus a schema value). */
export function loadCsv(file: string, required: string[], schema?: string): Table {
  const text = readFileSync(file, "utf-8");
  const parsed = Papa.parse<Row>(text.trim(), { header: true, skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new SchemaError(`${file}: CSV parse error at row ${e.row}: ${e.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const col of required) {
    if (!fields.includes(col)) {
      throw new SchemaError(`${file}: missing column "${col}"`);
    }
  }
  const rows = parsed.data;
  if (schema !== undefined) {
    for (const row of rows) {
      if (row.schema !== schema) {
        throw new SchemaError(
          `${file}: expected schema "${schema}", found "${row.schema}"`,
        );
      }
    }
  }
  return { file, rows };
}

export function num(row: Row, col: string, file: string): number {
  const v = Number(row[col]);
  if (!Number.isFinite(v)) {
    throw new SchemaError(`${file}: column "${col}" holds non-numeric value "${row[col]}"`);
  }
  return v;
}

export const SUMMARY_COLUMNS = [
  "schema", "policy", "sweep_value",
  "avg_cost_median", "avg_time_s_median", "avg_energy_median",
  "offload_local_median", "offload_mec_median", "offload_cloud_median",
  "retransmitted_per_episode_median", "discarded_per_episode_median",
];

export const CURVE_COLUMNS = [
  "schema", "episode", "steps", "mean_reward", "mean_time_s", "mean_energy",
];
