/**
 * Deterministic SVG assembly: fixed canvas, fixed fonts, stable number
 * formatting, so identical inputs produce byte-identical files.
 */

export const WIDTH = 640;
export const HEIGHT = 440;
export const MARGIN = { left: 64, right: 16, top: 36, bottom: 48 };

export function fmt(x: number): string {
  if (!Number.isFinite(x)) return "0";
  const s = x.toPrecision(6);
  return s.includes(".") ? s.replace(/\.?0+$/, "").replace(/\.?0+e/, "e") : s;
}

export interface Scale {
  (v: number): number;
  ticks: number[];
  label: (v: number) => string;
}

function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / n)));
  const candidates = [step, 2 * step, 5 * step, 10 * step];
  const chosen = candidates.find((s) => span / s <= n + 1) ?? 10 * step;
  const first = Math.ceil(lo / chosen) * chosen;
  const out: number[] = [];
  for (let v = first; v <= hi + 1e-12 * span; v += chosen) out.push(v);
  return out;
}

export function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  const f = ((v: number) => outLo + ((v - lo) / span) * (outHi - outLo)) as Scale;
  f.ticks = niceTicks(lo, hi);
  f.label = fmt;
  return f;
}

export function logScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  if (lo <= 0) throw new Error("log scale needs positive bounds");
  const llo = Math.log10(lo);
  const lhi = Math.log10(hi);
  const span = lhi - llo || 1;
  const f = ((v: number) => outLo + ((Math.log10(v) - llo) / span) * (outHi - outLo)) as Scale;
  const ticks: number[] = [];
  for (let e = Math.ceil(llo - 1e-9); e <= Math.floor(lhi + 1e-9); e++) ticks.push(Math.pow(10, e));
  f.ticks = ticks.length >= 2 ? ticks : [lo, hi];
  f.label = (v) => {
    const e = Math.log10(v);
    return Number.isInteger(e) ? `1e${e}` : fmt(v);
  };
  return f;
}

export class Svg {
  private parts: string[] = [];

  constructor(public width = WIDTH, public height = HEIGHT) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}" font-family="monospace" font-size="11">`
    );
    this.parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  }

  raw(s: string): void {
    this.parts.push(s);
  }

  rect(x: number, y: number, w: number, h: number, fill: string, opacity?: number): void {
    const op = opacity !== undefined ? ` fill-opacity="${fmt(opacity)}"` : "";
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}"${op}/>`
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke = "#333", width = 1): void {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"/>`
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 1.5): void {
    const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(
      `<polyline points="${pts}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`
    );
  }

  circle(x: number, y: number, r: number, fill: string): void {
    this.parts.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${fmt(r)}" fill="${fill}"/>`);
  }

  text(x: number, y: number, s: string, anchor = "start", fill = "#111"): void {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" fill="${fill}">${escapeXml(s)}</text>`
    );
  }

  toString(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export interface Frame {
  svg: Svg;
  x: Scale;
  y: Scale;
  plotLeft: number;
  plotRight: number;
  plotTop: number;
  plotBottom: number;
}

export function makeFrame(
  svg: Svg,
  xlo: number,
  xhi: number,
  ylo: number,
  yhi: number,
  opts: { logX?: boolean; logY?: boolean; xLabel?: string; yLabel?: string; title?: string } = {}
): Frame {
  const left = MARGIN.left;
  const right = svg.width - MARGIN.right;
  const top = MARGIN.top;
  const bottom = svg.height - MARGIN.bottom;
  const x = (opts.logX ? logScale : linearScale)(xlo, xhi, left, right);
  const y = (opts.logY ? logScale : linearScale)(ylo, yhi, bottom, top);
  svg.line(left, bottom, right, bottom);
  svg.line(left, bottom, left, top);
  for (const t of x.ticks) {
    const px = x(t);
    svg.line(px, bottom, px, bottom + 4);
    svg.text(px, bottom + 16, x.label(t), "middle", "#444");
  }
  for (const t of y.ticks) {
    const py = y(t);
    svg.line(left - 4, py, left, py);
    svg.text(left - 6, py + 3, y.label(t), "end", "#444");
  }
  if (opts.xLabel) svg.text((left + right) / 2, svg.height - 10, opts.xLabel, "middle");
  if (opts.yLabel) {
    svg.raw(
      `<text x="14" y="${fmt((top + bottom) / 2)}" text-anchor="middle" ` +
        `transform="rotate(-90 14 ${fmt((top + bottom) / 2)})">${opts.yLabel}</text>`
    );
  }
  if (opts.title) svg.text((left + right) / 2, 20, opts.title, "middle");
  return { svg, x, y, plotLeft: left, plotRight: right, plotTop: top, plotBottom: bottom };
}

export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/** Diverging blue-white-red map over [-1, 1] for operator heatmaps. */
export function divergingColor(v: number): string {
  const t = Math.max(-1, Math.min(1, v));
  const lerp = (a: number, b: number, u: number) => Math.round(a + (b - a) * u);
  let r: number, g: number, b: number;
  if (t < 0) {
    const u = t + 1; // 0 at -1 -> blue, 1 at 0 -> white
    r = lerp(33, 255, u);
    g = lerp(102, 255, u);
    b = lerp(172, 255, u);
  } else {
    const u = t; // 0 -> white, 1 -> red
    r = lerp(255, 178, u);
    g = lerp(255, 24, u);
    b = lerp(255, 43, u);
  }
  return `rgb(${r},${g},${b})`;
}
