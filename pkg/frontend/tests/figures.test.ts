import { describe, expect, it } from "vitest";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { FAMILIES, render } from "../src/figures.js";
import { SchemaError, loadCsv, SUMMARY_COLUMNS } from "../src/csv.js";

const here = dirname(fileURLToPath(import.meta.url));
const FULL = join(here, "fixtures", "full");
const EMPTY = join(here, "fixtures", "empty");
const BROKEN = join(here, "fixtures", "broken");

describe("figure families", () => {
  for (const family of FAMILIES) {
    it(`${family} renders from fixture CSVs`, () => {
      const { svg, warnings } = render(family, FULL);
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg).toContain("</svg>");
      expect(warnings).toEqual([]);
    });
  }

  it("re-rendering the same CSVs is byte-identical", () => {
    for (const family of FAMILIES) {
      const a = render(family, FULL).svg;
      const b = render(family, FULL).svg;
      expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
    }
  });

  it("fixture offload proportions sum to 1 and the stacked bars span the axis", () => {
    const table = loadCsv(join(FULL, "fig7_mec", "summary.csv"), SUMMARY_COLUMNS, "summary-v1");
    for (const row of table.rows) {
      const total = Number(row.offload_local_median) + Number(row.offload_mec_median)
        + Number(row.offload_cloud_median);
      expect(Math.abs(total - 1)).toBeLessThan(1e-9);
    }
    const { svg } = render("fig7", FULL);
    // the stacked panel's segments use the fixed segment palette; per
    // category their heights must sum to the full plot height (fraction 1.0)
    const seg = /<rect x="([\d.]+)" y="[\d.]+" width="([\d.]+)" height="([\d.]+)" fill="(#946000|#1f6fb4|#2b9a3e)"\/>/g;
    const byX = new Map<string, number>();
    for (const m of svg.matchAll(seg)) {
      if (m[2] === "10" && m[3] === "10") continue; // legend swatches
      byX.set(m[1], (byX.get(m[1]) ?? 0) + Number(m[3]));
    }
    expect(byX.size).toBeGreaterThan(0);
    for (const total of byX.values()) {
      expect(Math.abs(total - 179)).toBeLessThan(0.5); // plot height px
    }
  });

  it("empty-but-valid CSV renders empty axes with a warning", () => {
    const { svg, warnings } = render("fig7", EMPTY);
    expect(svg.startsWith("<svg")).toBe(true);
    expect(warnings.length).toBeGreaterThan(0);
    expect(warnings[0]).toContain("no data rows");
  });

  it("missing column error names the column and the file", () => {
    expect(() => render("fig7", BROKEN)).toThrowError(SchemaError);
    try {
      render("fig7", BROKEN);
    } catch (err) {
      const msg = String(err);
      expect(msg).toContain("sweep_value");
      expect(msg).toContain("summary.csv");
    }
  });

  it("interval cells sort numerically in the category axis", () => {
    const { svg } = render("fig8", FULL);
    const first = svg.indexOf("[1,3]");
    const second = svg.indexOf("[3,5]");
    expect(first).toBeGreaterThan(-1);
    expect(second).toBeGreaterThan(first);
  });

  it("unknown family is rejected", () => {
    expect(() => render("fig99" as never, FULL)).toThrowError(/unknown figure family/);
  });
});
