/** Small numeric helpers: least squares line and finite filtering. */

export interface LineFit {
  slope: number;
  intercept: number;
  r2: number;
  n: number;
}

export function linearFit(xs: number[], ys: number[]): LineFit {
  const pts: Array<[number, number]> = [];
  for (let i = 0; i < Math.min(xs.length, ys.length); i++) {
    const x = xs[i]!;
    const y = ys[i]!;
    if (Number.isFinite(x) && Number.isFinite(y)) pts.push([x, y]);
  }
  const n = pts.length;
  if (n < 2) return { slope: 0, intercept: n === 1 ? pts[0]![1] : 0, r2: 0, n };
  let sx = 0, sy = 0;
  for (const [x, y] of pts) { sx += x; sy += y; }
  const mx = sx / n, my = sy / n;
  let sxx = 0, sxy = 0, syy = 0;
  for (const [x, y] of pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx === 0) return { slope: 0, intercept: my, r2: 0, n };
  const slope = sxy / sxx;
  const r2 = syy === 0 ? 1 : (sxy * sxy) / (sxx * syy);
  return { slope, intercept: my - slope * mx, r2, n };
}

export function finitePairs(xs: number[], ys: number[]): [number[], number[]] {
  const ox: number[] = [];
  const oy: number[] = [];
  for (let i = 0; i < Math.min(xs.length, ys.length); i++) {
    if (Number.isFinite(xs[i]!) && Number.isFinite(ys[i]!)) {
      ox.push(xs[i]!);
      oy.push(ys[i]!);
    }
  }
  return [ox, oy];
}
