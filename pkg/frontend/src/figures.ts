/** The five figure families: a pure view over the harness's CSV output
 * (no metric is ever recomputed here). */

import { existsSync, readdirSync } from "node:fs";
import { join } from "node:path";
import { CURVE_COLUMNS, SUMMARY_COLUMNS, Row, Table, loadCsv, num } from "./csv.js";
import { PanelSpec, Series, figureSvg, orderPolicies, policyColor } from "./svg.js";

export const FAMILIES = ["fig6", "fig7", "fig8", "fig9", "fig10"] as const;
export type Family = (typeof FAMILIES)[number];

export interface RenderResult {
  svg: string;
  warnings: string[];
}

function summaryTable(inDir: string, experiment: string): Table {
  return loadCsv(join(inDir, experiment, "summary.csv"), SUMMARY_COLUMNS, "summary-v1");
}

/** Cells in file order (first-seen), de-duplicated. */
function cells(rows: Row[]): string[] {
  const seen: string[] = [];
  for (const r of rows) {
    if (!seen.includes(r.sweep_value)) seen.push(r.sweep_value);
  }
  return seen;
}

function metricSeries(table: Table, metric: string, categories: string[]): Series[] {
  const policies = orderPolicies(table.rows.map((r) => r.policy));
  return policies.map((policy) => ({
    label: policy,
    color: policyColor(policy),
    values: categories.map((cat) => {
      const row = table.rows.find((r) => r.policy === policy && r.sweep_value === cat);
      return row ? num(row, metric, table.file) : NaN;
    }),
  }));
}

function sortCells(names: string[]): string[] {
  // interval labels "[a,b]" and scalar labels sort numerically
  const key = (s: string) => Number(s.replace(/^\[/, "").split(",")[0]);
  return [...names].sort((a, b) => key(a) - key(b));
}

function lineFigure(table: Table, metrics: [string, string][], title: string,
                    warnings: string[]): string {
  const cats = sortCells(cells(table.rows));
  if (table.rows.length === 0) {
    warnings.push(`${table.file}: no data rows; rendering empty axes`);
  }
  const panels: PanelSpec[] = metrics.map(([metric, label]) => ({
    title: label,
    categories: cats,
    series: metricSeries(table, metric, cats),
    kind: "line",
    yLabel: label,
  }));
  const legend = panels[0].series;
  return figureSvg(panels, legend, title);
}

function fig6(inDir: string, warnings: string[]): string {
  const curveDir = join(inDir, "curves");
  const names = existsSync(curveDir)
    ? readdirSync(curveDir).filter((n) => n.endsWith(".csv")).sort()
    : [];
  if (names.length === 0) warnings.push(`${curveDir}: no curve CSVs; rendering empty axes`);
  const tables = names.map((n) => loadCsv(join(curveDir, n), CURVE_COLUMNS, "curves-v1"));
  const maxLen = Math.max(1, ...tables.map((t) => t.rows.length));
  const categories = Array.from({ length: maxLen }, (_, i) =>
    i % Math.max(1, Math.floor(maxLen / 6)) === 0 ? String(i) : "");
  const metric = (col: string, label: string): PanelSpec => ({
    title: label,
    categories,
    series: tables.map((t, k) => ({
      label: names[k].replace(/\.csv$/, ""),
      color: policyColor(names[k].split("_")[0].toUpperCase()),
      values: t.rows.map((r) => num(r, col, t.file)),
    })),
    kind: "line",
    yLabel: `${label} per episode`,
  });
  const panels = [metric("mean_reward", "reward"), metric("mean_time_s", "execution time (s)"),
                  metric("mean_energy", "energy")];
  return figureSvg(panels, panels[0].series, "training convergence (fig6)");
}

function fig7(inDir: string, warnings: string[]): string {
  const table = summaryTable(inDir, "fig7_mec");
  if (table.rows.length === 0) warnings.push(`${table.file}: no data rows; rendering empty axes`);
  const cats = sortCells(cells(table.rows));
  const panels: PanelSpec[] = [
    { title: "average cost", categories: cats,
      series: metricSeries(table, "avg_cost_median", cats), kind: "line",
      yLabel: "MEC capacity (Gc/slot)" },
    { title: "execution time (s)", categories: cats,
      series: metricSeries(table, "avg_time_s_median", cats), kind: "line",
      yLabel: "MEC capacity (Gc/slot)" },
    { title: "energy", categories: cats,
      series: metricSeries(table, "avg_energy_median", cats), kind: "line",
      yLabel: "MEC capacity (Gc/slot)" },
  ];
  // offload proportions of the learned proposal across capacity cells
  const target = table.rows.some((r) => r.policy === "A3C") ? "A3C"
    : orderPolicies(table.rows.map((r) => r.policy))[0];
  const segs: [string, string][] = [["offload_local_median", "local"],
                                    ["offload_mec_median", "MEC"],
                                    ["offload_cloud_median", "cloud"]];
  panels.push({
    title: `offload proportion (${target ?? "none"})`,
    categories: cats,
    series: segs.map(([col, label], i) => ({
      label,
      color: ["#946000", "#1f6fb4", "#2b9a3e"][i],
      values: cats.map((cat) => {
        const row = table.rows.find((r) => r.policy === target && r.sweep_value === cat);
        return row ? num(row, col, table.file) : NaN;
      }),
    })),
    kind: "stacked",
    yLabel: "fraction of tasks",
  });
  const legend = [...panels[0].series, ...panels[3].series];
  return figureSvg(panels, legend, "static queue: MEC capacity sweep (fig7)");
}

function fig8(inDir: string, warnings: string[]): string {
  const parts: [string, string][] = [["fig8_cycles", "task cycles (Gc)"],
                                     ["fig8_size", "task size (MB)"],
                                     ["fig8_rate", "task arrival rate"]];
  const panels: PanelSpec[] = [];
  let legend: Series[] = [];
  for (const [exp, label] of parts) {
    const table = summaryTable(inDir, exp);
    if (table.rows.length === 0) warnings.push(`${table.file}: no data rows; rendering empty axes`);
    const cats = sortCells(cells(table.rows));
    const series = metricSeries(table, "avg_cost_median", cats);
    panels.push({ title: `average cost vs ${label}`, categories: cats, series,
                  kind: "line", yLabel: label });
    if (series.length > legend.length) legend = series;
  }
  return figureSvg(panels, legend, "dynamic queue: average cost sweeps (fig8)");
}

function fig9(inDir: string, warnings: string[]): string {
  const table = summaryTable(inDir, "fig9_speed");
  if (table.rows.length === 0) warnings.push(`${table.file}: no data rows; rendering empty axes`);
  const cats = sortCells(cells(table.rows));
  const series = metricSeries(table, "retransmitted_per_episode_median", cats);
  const panels: PanelSpec[] = [{
    title: "re-transmitted tasks per episode", categories: cats, series,
    kind: "bar", yLabel: "vehicle speed (m/s)",
  }];
  return figureSvg(panels, series, "re-transmissions vs speed (fig9)");
}

function fig10(inDir: string, warnings: string[]): string {
  const table = summaryTable(inDir, "fig8_rate");
  if (table.rows.length === 0) warnings.push(`${table.file}: no data rows; rendering empty axes`);
  const cats = sortCells(cells(table.rows));
  const series = metricSeries(table, "discarded_per_episode_median", cats);
  const panels: PanelSpec[] = [{
    title: "discarded tasks per episode", categories: cats, series,
    kind: "bar", yLabel: "task arrival rate",
  }];
  return figureSvg(panels, series, "discarded tasks vs arrival rate (fig10)");
}

export function render(family: Family, inDir: string): RenderResult {
  const warnings: string[] = [];
  let svg: string;
  switch (family) {
    case "fig6": svg = fig6(inDir, warnings); break;
    case "fig7": svg = fig7(inDir, warnings); break;
    case "fig8": svg = fig8(inDir, warnings); break;
    case "fig9": svg = fig9(inDir, warnings); break;
    case "fig10": svg = fig10(inDir, warnings); break;
    default: throw new Error(`unknown figure family "${family}"`);
  }
  return { svg, warnings };
}
