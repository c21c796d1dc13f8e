/** Least-squares line fit used to re-derive displayed slopes. */

export function linearFit(x: number[], y: number[]): { slope: number; intercept: number } {
  if (x.length !== y.length || x.length < 2) {
    throw new Error(`need >= 2 matched points, got ${x.length}/${y.length}`);
  }
  const n = x.length;
  const mx = x.reduce((a, b) => a + b, 0) / n;
  const my = y.reduce((a, b) => a + b, 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sxx += (x[i]! - mx) * (x[i]! - mx);
    sxy += (x[i]! - mx) * (y[i]! - my);
  }
  const slope = sxy / sxx;
  return { slope, intercept: my - slope * mx };
}

export function logLogSlope(x: number[], y: number[]): number {
  const pairs = x
    .map((v, i) => [v, y[i]!] as const)
    .filter(([a, b]) => a > 0 && b > 0);
  return linearFit(
    pairs.map(([a]) => Math.log(a)),
    pairs.map(([, b]) => Math.log(b))
  ).slope;
}
