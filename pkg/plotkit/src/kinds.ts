/** The five figure kinds rendered from opssplit outputs. */

import { Table, column, readCsv, requireColumns } from "./csv";
import { channelSlice, readFields } from "./fields";
import { logLogSlope } from "./fit";
import { PALETTE, Svg, divergingColor, fmt, makeFrame } from "./svg";

export interface PlotOptions {
  title?: string;
  logY?: boolean;
  channels?: string[];
  traj?: number;
  frame?: number;
}

function shadeExtrapolation(frameBox: ReturnType<typeof makeFrame>, frames: number[], flags: number[]): void {
  const first = flags.findIndex((f) => f !== 0);
  if (first < 0) return;
  const x0 = frameBox.x(frames[first]!);
  frameBox.svg.rect(
    x0,
    frameBox.plotTop,
    frameBox.plotRight - x0,
    frameBox.plotBottom - frameBox.plotTop,
    "#ff9f43",
    0.18
  );
}

function positiveFloor(values: number[]): number {
  const pos = values.filter((v) => v > 0);
  return pos.length ? Math.min(...pos) : 1e-12;
}

export function renderRollout(inPath: string, opts: PlotOptions = {}): string {
  const table = readCsv(inPath);
  requireColumns(table, ["frame", "nrmse_mean", "nrmse_std", "extrapolation_flag"], inPath);
  const frames = column(table, "frame");
  const mean = column(table, "nrmse_mean");
  const std = column(table, "nrmse_std");
  const flags = column(table, "extrapolation_flag");
  const logY = opts.logY ?? true;
  const lo = logY ? positiveFloor(mean.map((m, i) => m - std[i]!).concat(mean)) : 0;
  const hi = Math.max(...mean.map((m, i) => m + std[i]!)) * 1.05;
  const svg = new Svg();
  const box = makeFrame(svg, frames[0]!, frames[frames.length - 1]!, lo, hi, {
    logY,
    xLabel: "frame",
    yLabel: "NRMSE",
    title: opts.title ?? "rollout error",
  });
  shadeExtrapolation(box, frames, flags);
  const band: Array<[number, number]> = frames.map((f, i) => [
    box.x(f),
    box.y(Math.max(lo, mean[i]! + std[i]!)),
  ]);
  for (let i = frames.length - 1; i >= 0; i--) {
    band.push([box.x(frames[i]!), box.y(Math.max(lo, mean[i]! - std[i]!))]);
  }
  svg.raw(
    `<polygon points="${band.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ")}" ` +
      `fill="${PALETTE[0]}" fill-opacity="0.15"/>`
  );
  box.svg.polyline(frames.map((f, i) => [box.x(f), box.y(Math.max(lo, mean[i]!))]), PALETTE[0]!);
  return svg.toString();
}

export function renderResidual(inPath: string, opts: PlotOptions = {}): string {
  const table = readCsv(inPath);
  requireColumns(table, ["frame", "residual_mean", "residual_reference", "extrapolation_flag"], inPath);
  const frames = column(table, "frame");
  const mean = column(table, "residual_mean");
  const ref = column(table, "residual_reference");
  const flags = column(table, "extrapolation_flag");
  const all = mean.concat(ref);
  const svg = new Svg();
  const box = makeFrame(svg, frames[0]!, frames[frames.length - 1]!, positiveFloor(all), Math.max(...all) * 1.1, {
    logY: true,
    xLabel: "frame",
    yLabel: "mean |div v|",
    title: opts.title ?? "continuity residual",
  });
  shadeExtrapolation(box, frames, flags);
  box.svg.polyline(frames.map((f, i) => [box.x(f), box.y(Math.max(mean[i]!, 1e-300))]), PALETTE[0]!);
  box.svg.polyline(frames.map((f, i) => [box.x(f), box.y(Math.max(ref[i]!, 1e-300))]), PALETTE[2]!);
  svg.text(box.plotRight - 4, box.plotTop + 14, "prediction", "end", PALETTE[0]!);
  svg.text(box.plotRight - 4, box.plotTop + 28, "reference floor", "end", PALETTE[2]!);
  return svg.toString();
}

export function renderConvergence(inPath: string, opts: PlotOptions = {}): string {
  const table = readCsv(inPath);
  requireColumns(table, ["h", "error"], inPath);
  const h = column(table, "h");
  const err = column(table, "error");
  const slope = logLogSlope(h, err);
  const svg = new Svg();
  const box = makeFrame(svg, Math.min(...h), Math.max(...h), positiveFloor(err), Math.max(...err) * 1.2, {
    logX: true,
    logY: true,
    xLabel: "h",
    yLabel: "max error",
    title: opts.title ?? "convergence order",
  });
  const pts = h.map((v, i) => [box.x(v), box.y(err[i]!)] as [number, number]);
  box.svg.polyline(pts, PALETTE[0]!);
  for (const [x, y] of pts) svg.circle(x, y, 3, PALETTE[0]!);
  svg.text(box.plotLeft + 8, box.plotTop + 14, `fitted slope ${slope.toFixed(2)}`, "start");
  return svg.toString();
}

const THEOREM_SERIES: Array<[string, string]> = [
  ["err_ar", "slope_ar"],
  ["err_node", "slope_node"],
  ["err_opssplit", "slope_opssplit"],
];

export interface TheoremSlopes {
  refit: Record<string, number>;
  declared: Record<string, number>;
}

export function theoremSlopes(table: Table): TheoremSlopes {
  const shifts = column(table, "shift").filter((s) => s > 0);
  const refit: Record<string, number> = {};
  const declared: Record<string, number> = {};
  for (const [errCol, slopeCol] of THEOREM_SERIES) {
    const errs = table.rows.filter((r) => r.shift! > 0).map((r) => r[errCol]!);
    refit[errCol] = logLogSlope(shifts, errs);
    declared[errCol] = table.rows[0]![slopeCol]!;
  }
  return { refit, declared };
}

export function renderTheorem(inPath: string, opts: PlotOptions = {}): string {
  const table = readCsv(inPath);
  requireColumns(
    table,
    ["shift", "err_ar", "err_node", "err_opssplit", "slope_ar", "slope_node", "slope_opssplit"],
    inPath
  );
  const rows = table.rows.filter((r) => r.shift! > 0);
  const shifts = rows.map((r) => r.shift!);
  const slopes = theoremSlopes(table);
  const allErr = THEOREM_SERIES.flatMap(([c]) => rows.map((r) => r[c]!));
  const svg = new Svg();
  const box = makeFrame(
    svg,
    Math.min(...shifts),
    Math.max(...shifts),
    positiveFloor(allErr) * 0.8,
    Math.max(...allErr) * 1.3,
    { logX: true, logY: true, xLabel: "coefficient shift", yLabel: "dynamics error",
      title: opts.title ?? "error under coefficient shift" }
  );
  THEOREM_SERIES.forEach(([errCol], si) => {
    const color = PALETTE[si]!;
    const pts = rows.map((r) => [box.x(r.shift!), box.y(r[errCol]!)] as [number, number]);
    box.svg.polyline(pts, color);
    for (const [x, y] of pts) svg.circle(x, y, 3, color);
    const name = errCol.replace("err_", "");
    svg.text(
      box.plotLeft + 8,
      box.plotTop + 14 * (si + 1),
      `${name}: slope ${slopes.refit[errCol]!.toFixed(2)}`,
      "start",
      color
    );
  });
  return svg.toString();
}

export function renderHeatmapTriptych(basePath: string, opts: PlotOptions = {}): string {
  const container = readFields(basePath);
  const channels = opts.channels ?? defaultTriptychChannels(container.meta.channels);
  if (channels.length !== 3) {
    throw new Error(`triptych needs exactly 3 channels, got [${channels.join(", ")}]`);
  }
  const traj = opts.traj ?? 0;
  const frame = opts.frame ?? 0;
  const panelW = 196;
  const panelH = 196;
  const gap = 14;
  const top = 44;
  const svg = new Svg(3 * panelW + 4 * gap, top + panelH + 28);
  if (opts.title) svg.text((3 * panelW + 4 * gap) / 2, 20, opts.title, "middle");
  channels.forEach((name, pi) => {
    const { values, h, w } = channelSlice(container, traj, frame, name);
    const x0 = gap + pi * (panelW + gap);
    // operator comparisons arrive normalised; a symmetric [-1, 1] scale
    // keeps panels directly comparable
    const cw = panelW / w;
    const ch = panelH / h;
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        svg.rect(x0 + j * cw, top + i * ch, cw + 0.5, ch + 0.5, divergingColor(values[i * w + j]!));
      }
    }
    svg.text(x0 + panelW / 2, top + panelH + 16, name, "middle");
  });
  return svg.toString();
}

function defaultTriptychChannels(available: string[]): string[] {
  const prefixes = ["state_", "learned_", "numerical_"];
  const picks = prefixes
    .map((p) => available.find((c) => c.startsWith(p)))
    .filter((c): c is string => !!c);
  if (picks.length === 3) return picks;
  return available.slice(0, 3);
}

export const KINDS: Record<string, (inPath: string, opts?: PlotOptions) => string> = {
  rollout: renderRollout,
  residual: renderResidual,
  convergence: renderConvergence,
  theorem: renderTheorem,
  "heatmap-triptych": renderHeatmapTriptych,
};
