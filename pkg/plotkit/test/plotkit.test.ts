import { mkdtempSync, writeFileSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { readCsv, requireColumns, SchemaError } from "../src/csv";
import { channelSlice, readFields } from "../src/fields";
import { logLogSlope } from "../src/fit";
import {
  renderConvergence,
  renderHeatmapTriptych,
  renderResidual,
  renderRollout,
  renderTheorem,
  theoremSlopes,
} from "../src/kinds";
import { main } from "../src/cli";

let dir: string;

function write(name: string, text: string): string {
  const p = join(dir, name);
  writeFileSync(p, text);
  return p;
}

function rolloutCsv(): string {
  const rows = ["# config_hash: abc123", "frame,nrmse_mean,nrmse_std,extrapolation_flag"];
  for (let f = 0; f < 20; f++) {
    const mean = 0.01 * Math.exp(f / 8);
    rows.push(`${f},${mean},${mean / 10},${f >= 10 ? 1 : 0}`);
  }
  return rows.join("\n") + "\n";
}

function residualCsv(): string {
  const rows = ["# config_hash: abc123", "frame,residual_mean,residual_reference,extrapolation_flag"];
  for (let f = 0; f < 12; f++) {
    rows.push(`${f},${0.02 + 0.001 * f},${0.015},${f >= 6 ? 1 : 0}`);
  }
  return rows.join("\n") + "\n";
}

function convergenceCsv(): string {
  const rows = ["h,error"];
  for (const n of [32, 64, 128, 256]) {
    const h = 1 / n;
    rows.push(`${h},${25 * h * h}`);
  }
  return rows.join("\n") + "\n";
}

function theoremCsv(): string {
  // err_ar = 0.01*s, err_node = s, err_opssplit = 0.05 * s^0.01
  const shifts = [0.01, 0.0215, 0.0464, 0.1];
  const slopeOf = (errs: number[]) => logLogSlope(shifts, errs);
  const ar = shifts.map((s) => 0.01 * s);
  const node = shifts.map((s) => s);
  const os = shifts.map((s) => 0.05 * Math.pow(s, 0.01));
  const sar = slopeOf(ar);
  const snode = slopeOf(node);
  const sos = slopeOf(os);
  const rows = ["# config_hash: abc123",
    "shift,err_ar,err_node,err_opssplit,slope_ar,slope_node,slope_opssplit"];
  shifts.forEach((s, i) => {
    rows.push(`${s},${ar[i]},${node[i]},${os[i]},${sar},${snode},${sos}`);
  });
  return rows.join("\n") + "\n";
}

function fieldsFixture(base: string): void {
  // [N=1, T=1, C=3, H=4, W=4] little-endian doubles in [-1, 1]
  const h = 4;
  const w = 4;
  const channels = ["state_u", "learned_u", "numerical_u"];
  const values: number[] = [];
  for (let c = 0; c < 3; c++) {
    for (let i = 0; i < h * w; i++) {
      values.push(Math.sin(c + i * 0.7));
    }
  }
  const buf = Buffer.alloc(values.length * 8);
  values.forEach((v, i) => buf.writeDoubleLE(v, i * 8));
  writeFileSync(base + ".fields", buf);
  writeFileSync(
    base + ".meta.json",
    JSON.stringify({
      format: "opssplit-fields",
      schema_version: "1",
      split: "test",
      shape: [1, 1, 3, h, w],
      channels,
      grid: { h, w, dx: 0.25, dy: 0.25 },
      frame_interval: 0.01,
      normalized: true,
    })
  );
}

beforeAll(() => {
  dir = mkdtempSync(join(tmpdir(), "plotkit-"));
});

describe("csv reader", () => {
  it("parses header, rows and config hash", () => {
    const p = write("roll.csv", rolloutCsv());
    const t = readCsv(p);
    expect(t.configHash).toBe("abc123");
    expect(t.columns).toEqual(["frame", "nrmse_mean", "nrmse_std", "extrapolation_flag"]);
    expect(t.rows).toHaveLength(20);
  });

  it("rejects missing columns with a schema diff", () => {
    const p = write("bad.csv", "a,b\n1,2\n");
    const t = readCsv(p);
    expect(() => requireColumns(t, ["frame"], p)).toThrow(SchemaError);
    expect(() => requireColumns(t, ["frame"], p)).toThrow(/missing columns \[frame\]/);
  });

  it("rejects empty series", () => {
    const p = write("empty.csv", "frame,nrmse_mean,nrmse_std,extrapolation_flag\n");
    const t = readCsv(p);
    expect(() => requireColumns(t, ["frame"], p)).toThrow(/no data rows/);
  });
});

describe("field container reader", () => {
  it("reads values back and slices channels", () => {
    const base = join(dir, "dump");
    fieldsFixture(base);
    const c = readFields(base);
    const slice = channelSlice(c, 0, 0, "learned_u");
    expect(slice.h).toBe(4);
    expect(slice.values[0]).toBeCloseTo(Math.sin(1), 12);
  });

  it("rejects truncated payloads", () => {
    const base = join(dir, "trunc");
    fieldsFixture(base);
    const raw = readFileSync(base + ".fields");
    writeFileSync(base + ".fields", raw.subarray(0, raw.length - 8));
    expect(() => readFields(base)).toThrow(/expected .* bytes/);
  });

  it("rejects unknown format tags", () => {
    const base = join(dir, "badtag");
    fieldsFixture(base);
    const meta = JSON.parse(readFileSync(base + ".meta.json", "utf-8"));
    meta.format = "other";
    writeFileSync(base + ".meta.json", JSON.stringify(meta));
    expect(() => readFields(base)).toThrow(/format tag/);
  });
});

describe("figure kinds", () => {
  it("renders all five kinds", () => {
    const outputs = [
      renderRollout(write("r1.csv", rolloutCsv())),
      renderResidual(write("r2.csv", residualCsv())),
      renderConvergence(write("r3.csv", convergenceCsv())),
      renderTheorem(write("r4.csv", theoremCsv())),
    ];
    const base = join(dir, "hm");
    fieldsFixture(base);
    outputs.push(renderHeatmapTriptych(base));
    for (const svg of outputs) {
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg.endsWith("</svg>\n")).toBe(true);
    }
  });

  it("shades the extrapolation region from the flag column", () => {
    const svg = renderRollout(write("r5.csv", rolloutCsv()));
    expect(svg).toContain("#ff9f43");
  });

  it("re-fitted theorem slopes match the declared columns within 0.01", () => {
    const p = write("r6.csv", theoremCsv());
    const slopes = theoremSlopes(readCsv(p));
    for (const key of ["err_ar", "err_node", "err_opssplit"] as const) {
      expect(Math.abs(slopes.refit[key]! - slopes.declared[key]!)).toBeLessThan(0.01);
    }
    const svg = renderTheorem(p);
    expect(svg).toContain(`node: slope ${slopes.refit.err_node!.toFixed(2)}`);
  });

  it("convergence annotation carries the fitted slope", () => {
    const svg = renderConvergence(write("r7.csv", convergenceCsv()));
    expect(svg).toContain("fitted slope 2.00");
  });

  it("renders are byte-stable across runs", () => {
    const p = write("r8.csv", rolloutCsv());
    expect(renderRollout(p)).toBe(renderRollout(p));
    const base = join(dir, "hm2");
    fieldsFixture(base);
    expect(renderHeatmapTriptych(base)).toBe(renderHeatmapTriptych(base));
  });

  it("triptych needs exactly three channels", () => {
    const base = join(dir, "hm3");
    fieldsFixture(base);
    expect(() => renderHeatmapTriptych(base, { channels: ["state_u"] })).toThrow(/exactly 3/);
  });
});

describe("cli", () => {
  it("writes a figure and exits 0", () => {
    const p = write("c1.csv", rolloutCsv());
    const out = join(dir, "fig.svg");
    expect(main(["rollout", "--in", p, "--out", out])).toBe(0);
    expect(readFileSync(out, "utf-8")).toContain("<svg");
  });

  it("column mismatch exits non-zero", () => {
    const p = write("c2.csv", "a,b\n1,2\n");
    expect(main(["rollout", "--in", p, "--out", join(dir, "x.svg")])).toBe(1);
  });

  it("unknown kind exits non-zero", () => {
    expect(main(["pie", "--in", "x", "--out", "y"])).toBe(1);
  });

  it("heatmap channels option", () => {
    const base = join(dir, "hm4");
    fieldsFixture(base);
    const out = join(dir, "fig2.svg");
    const rc = main([
      "heatmap-triptych", "--in", base, "--out", out,
      "--channels", "state_u,learned_u,numerical_u",
    ]);
    expect(rc).toBe(0);
  });
});
