/**
 * Reader for the binary field container: `<base>.fields` holds little-endian
 * float64 values laid out [N, T, C, H, W]; `<base>.meta.json` names the
 * channels and grid. Implemented from the documented layout, independently
 * of the producer.
 */

import { readFileSync, statSync } from "node:fs";

export interface FieldsMeta {
  format: string;
  schema_version: string;
  split: string;
  shape: [number, number, number, number, number];
  channels: string[];
  grid: { h: number; w: number; dx: number; dy: number };
  frame_interval: number;
  normalized: boolean;
}

export interface FieldContainer {
  meta: FieldsMeta;
  data: Float64Array; // flat [N, T, C, H, W]
}

export function readFields(basePath: string): FieldContainer {
  const meta = JSON.parse(readFileSync(basePath + ".meta.json", "utf-8")) as FieldsMeta;
  if (meta.format !== "opssplit-fields") {
    throw new Error(`${basePath}: unexpected format tag ${meta.format}`);
  }
  if (meta.schema_version !== "1") {
    throw new Error(`${basePath}: unsupported schema version ${meta.schema_version}`);
  }
  const expected = meta.shape.reduce((a, b) => a * b, 1) * 8;
  const actual = statSync(basePath + ".fields").size;
  if (expected !== actual) {
    throw new Error(`${basePath}.fields: expected ${expected} bytes, found ${actual}`);
  }
  const buf = readFileSync(basePath + ".fields");
  const data = new Float64Array(meta.shape.reduce((a, b) => a * b, 1));
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readDoubleLE(i * 8);
  }
  return { meta, data };
}

/** Extract one [H, W] slice by trajectory, frame and channel name. */
export function channelSlice(
  container: FieldContainer,
  traj: number,
  frame: number,
  channel: string
): { values: Float64Array; h: number; w: number } {
  const { meta, data } = container;
  const [n, t, c, h, w] = meta.shape;
  const ci = meta.channels.indexOf(channel);
  if (ci < 0) {
    throw new Error(`no channel ${channel}; have [${meta.channels.join(", ")}]`);
  }
  if (traj >= n || frame >= t) {
    throw new Error(`slice (${traj}, ${frame}) outside container shape ${meta.shape}`);
  }
  const offset = ((traj * t + frame) * c + ci) * h * w;
  return { values: data.subarray(offset, offset + h * w), h, w };
}
