#!/usr/bin/env node
/**
 * plotkit <kind> --in <path> --out <figure.svg> [options]
 *
 * Kinds: rollout | residual | convergence | theorem | heatmap-triptych
 * For heatmap-triptych, --in is the field-container base path (no extension)
 * and --channels picks the three panels.
 */

import { writeFileSync } from "node:fs";
import { KINDS, PlotOptions } from "./kinds";

function parseArgs(argv: string[]): { kind: string; inPath: string; outPath: string; opts: PlotOptions } {
  const [kind, ...rest] = argv;
  if (!kind || !(kind in KINDS)) {
    throw new Error(`usage: plotkit <${Object.keys(KINDS).join("|")}> --in PATH --out FILE.svg`);
  }
  let inPath = "";
  let outPath = "";
  const opts: PlotOptions = {};
  for (let i = 0; i < rest.length; i++) {
    const arg = rest[i]!;
    const next = () => {
      i += 1;
      const v = rest[i];
      if (v === undefined) throw new Error(`missing value after ${arg}`);
      return v;
    };
    switch (arg) {
      case "--in":
        inPath = next();
        break;
      case "--out":
        outPath = next();
        break;
      case "--title":
        opts.title = next();
        break;
      case "--channels":
        opts.channels = next().split(",");
        break;
      case "--traj":
        opts.traj = Number(next());
        break;
      case "--frame":
        opts.frame = Number(next());
        break;
      case "--linear-y":
        opts.logY = false;
        break;
      default:
        throw new Error(`unknown option ${arg}`);
    }
  }
  if (!inPath || !outPath) throw new Error("--in and --out are required");
  return { kind, inPath, outPath, opts };
}

export function main(argv: string[]): number {
  try {
    const { kind, inPath, outPath, opts } = parseArgs(argv);
    const svg = KINDS[kind]!(inPath, opts);
    writeFileSync(outPath, svg);
    console.log(`wrote ${outPath}`);
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
