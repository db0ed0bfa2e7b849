/** Deterministic SVG chart building: fixed palette, fixed ordering, no
 * timestamps or generated ids, so re-rendering the same data is
 * byte-identical. */

export const PALETTE = [
  "#1f6fb4", "#d95f02", "#2b9a3e", "#c02ad1", "#946000", "#5a5a5a", "#c43b3b",
];

export const POLICY_ORDER = ["A3C", "DQN", "A3CL", "AL", "AM", "AC", "RC"];

export function policyColor(name: string): string {
  const i = POLICY_ORDER.indexOf(name);
  return PALETTE[(i >= 0 ? i : POLICY_ORDER.length) % PALETTE.length];
}

export function orderPolicies(names: string[]): string[] {
  return [...new Set(names)].sort((a, b) => {
    const ia = POLICY_ORDER.indexOf(a), ib = POLICY_ORDER.indexOf(b);
    const ka = ia >= 0 ? ia : POLICY_ORDER.length, kb = ib >= 0 ? ib : POLICY_ORDER.length;
    return ka - kb || a.localeCompare(b);
  });
}

const fmt = (v: number) => {
  const s = v.toFixed(3);
  return s.replace(/\.?0+$/, "") || "0";
};

export interface Scale {
  (v: number): number;
  ticks: number[];
}

export function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  if (hi <= lo) hi = lo + 1;
  const f = ((v: number) => outLo + ((v - lo) / (hi - lo)) * (outHi - outLo)) as Scale;
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / 4)));
  const mult = span / step > 20 ? 5 : span / step > 8 ? 2 : 1;
  const tick = step * mult;
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / tick) * tick; t <= hi + 1e-12; t += tick) ticks.push(t);
  f.ticks = ticks;
  return f;
}

export interface Series {
  label: string;
  color: string;
  values: number[]; // aligned to the category axis
}

export interface PanelSpec {
  title: string;
  categories: string[];
  series: Series[];
  kind: "line" | "bar" | "stacked";
  yLabel: string;
}

const P = { w: 360, h: 260, left: 52, right: 10, top: 26, bottom: 55 };

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function panelSvg(spec: PanelSpec, x0: number, y0: number): string {
  const out: string[] = [];
  const plotW = P.w - P.left - P.right;
  const plotH = P.h - P.top - P.bottom;
  const values = spec.series.flatMap((s) => s.values).filter(Number.isFinite);
  let lo = Math.min(0, ...values);
  let hi = Math.max(1e-9, ...values);
  if (spec.kind === "stacked") { lo = 0; hi = 1; }
  const y = linearScale(lo, hi, plotH, 0);
  const n = Math.max(1, spec.categories.length);

  out.push(`<g transform="translate(${x0},${y0})">`);
  out.push(`<text x="${P.left + plotW / 2}" y="14" text-anchor="middle" class="title">${esc(spec.title)}</text>`);
  out.push(`<g transform="translate(${P.left},${P.top})">`);
  out.push(`<rect x="0" y="0" width="${plotW}" height="${plotH}" class="frame"/>`);
  for (const t of y.ticks) {
    const yy = fmt(y(t));
    out.push(`<line x1="0" x2="${plotW}" y1="${yy}" y2="${yy}" class="grid"/>`);
    out.push(`<text x="-6" y="${fmt(y(t) + 3)}" text-anchor="end" class="tick">${fmt(t)}</text>`);
  }
  spec.categories.forEach((cat, i) => {
    const cx = ((i + 0.5) / n) * plotW;
    out.push(`<text x="${fmt(cx)}" y="${plotH + 16}" text-anchor="middle" class="tick">${esc(cat)}</text>`);
  });
  out.push(`<text x="${plotW / 2}" y="${plotH + 32}" text-anchor="middle" class="axis">${esc(spec.yLabel)}</text>`);

  if (spec.kind === "line") {
    for (const s of spec.series) {
      const pts = s.values
        .map((v, i) => (Number.isFinite(v) ? `${fmt(((i + 0.5) / n) * plotW)},${fmt(y(v))}` : null))
        .filter((p): p is string => p !== null);
      if (pts.length > 0) {
        out.push(`<polyline points="${pts.join(" ")}" fill="none" stroke="${s.color}" stroke-width="1.6"/>`);
      }
      s.values.forEach((v, i) => {
        if (Number.isFinite(v)) {
          out.push(`<circle cx="${fmt(((i + 0.5) / n) * plotW)}" cy="${fmt(y(v))}" r="2.4" fill="${s.color}"/>`);
        }
      });
    }
  } else if (spec.kind === "bar") {
    const groupW = plotW / n;
    const barW = (groupW * 0.8) / Math.max(1, spec.series.length);
    spec.series.forEach((s, k) => {
      s.values.forEach((v, i) => {
        if (!Number.isFinite(v)) return;
        const x = i * groupW + groupW * 0.1 + k * barW;
        const yTop = y(Math.max(0, v));
        const h = Math.abs(y(0) - y(v));
        out.push(`<rect x="${fmt(x)}" y="${fmt(yTop)}" width="${fmt(barW)}" height="${fmt(h)}" fill="${s.color}"/>`);
      });
    });
  } else {
    // stacked: series are the segments, one bar per category
    const groupW = plotW / n;
    const barW = groupW * 0.6;
    for (let i = 0; i < n; i++) {
      let acc = 0;
      for (const s of spec.series) {
        const v = s.values[i];
        if (!Number.isFinite(v) || v <= 0) continue;
        const yTop = y(acc + v);
        const h = y(acc) - y(acc + v);
        out.push(`<rect x="${fmt(i * groupW + groupW * 0.2)}" y="${fmt(yTop)}" width="${fmt(barW)}" height="${fmt(h)}" fill="${s.color}"/>`);
        acc += v;
      }
    }
  }
  out.push("</g></g>");
  return out.join("\n");
}

export function figureSvg(panels: PanelSpec[], legend: Series[], title: string): string {
  const cols = Math.min(panels.length, 2);
  const rows = Math.ceil(panels.length / cols);
  const legendH = 24;
  const width = cols * P.w;
  const height = rows * P.h + legendH + 18;
  const out: string[] = [];
  out.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`);
  out.push(`<style>text{font-family:Helvetica,Arial,sans-serif}.title{font-size:12px;font-weight:bold}.tick{font-size:9px}.axis{font-size:10px}.legend{font-size:10px}.frame{fill:none;stroke:#888;stroke-width:1}.grid{stroke:#e3e3e3;stroke-width:0.6}</style>`);
  out.push(`<text x="${width / 2}" y="14" text-anchor="middle" class="title">${esc(title)}</text>`);
  panels.forEach((p, i) => {
    out.push(panelSvg(p, (i % cols) * P.w, 18 + Math.floor(i / cols) * P.h));
  });
  let lx = 12;
  const ly = rows * P.h + 18 + 14;
  for (const s of legend) {
    out.push(`<rect x="${lx}" y="${ly - 8}" width="10" height="10" fill="${s.color}"/>`);
    out.push(`<text x="${lx + 14}" y="${ly}" class="legend">${esc(s.label)}</text>`);
    lx += 14 + 9 * s.label.length + 18;
  }
  out.push("</svg>");
  return out.join("\n") + "\n";
}
