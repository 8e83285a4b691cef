/**
 * Hand-rolled SVG chart emission: axes, tick labels, polyline series,
 * shaded confidence bands and a legend.  No runtime dependencies; output is
 * deterministic for fixed input.
 */

export type AxisTransform = "linear" | "log" | "lnt34";

export interface Series {
  x: number[];
  y: number[];
  label: string;
  color: string;
  dash?: string;
  width?: number;
  band?: { lo: number[]; hi: number[] };
  markers?: boolean;
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  xTransform: AxisTransform;
  yTransform: AxisTransform;
  series: Series[];
  annotation?: string[];
  width?: number;
  height?: number;
}

export class TransformError extends Error {
  constructor(axis: string, transform: AxisTransform, value: number) {
    super(`${transform} transform undefined for ${axis} value ${value}`);
    this.name = "TransformError";
  }
}

function applyTransform(v: number, t: AxisTransform, axis: string): number {
  if (!Number.isFinite(v)) return NaN;
  switch (t) {
    case "linear":
      return v;
    case "log":
      if (v <= 0) throw new TransformError(axis, t, v);
      return Math.log10(v);
    case "lnt34":
      // abscissa scale of the slow-decay threshold: (ln t)^{3/4}
      if (v < 1) throw new TransformError(axis, t, v);
      return Math.pow(Math.log(v), 0.75);
  }
}

function fmtTick(v: number, t: AxisTransform): string {
  if (t === "log") {
    return `1e${Math.round(v)}`;
  }
  const a = Math.abs(v);
  if (a !== 0 && (a >= 1e4 || a < 1e-3)) return v.toExponential(1);
  return String(Math.round(v * 1000) / 1000);
}

function ticks(lo: number, hi: number, n = 6): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / n)));
  const mult = [1, 2, 5, 10].find((m) => span / (step * m) <= n) ?? 10;
  const s = step * mult;
  const first = Math.ceil(lo / s) * s;
  const out: number[] = [];
  for (let v = first; v <= hi + 1e-12 * span; v += s) out.push(v);
  return out;
}

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export function renderChart(spec: ChartSpec): string {
  const W = spec.width ?? 860;
  const H = spec.height ?? 560;
  const m = { left: 78, right: 24, top: 46, bottom: 58 };
  const innerW = W - m.left - m.right;
  const innerH = H - m.top - m.bottom;

  const txs: number[] = [];
  const tys: number[] = [];
  const tSeries = spec.series.map((s) => {
    const xs: number[] = [];
    const ys: number[] = [];
    for (let i = 0; i < Math.min(s.x.length, s.y.length); i++) {
      const xv = s.x[i]!;
      const yv = s.y[i]!;
      if (!Number.isFinite(xv) || !Number.isFinite(yv)) continue; // not plotted
      const tx = applyTransform(xv, spec.xTransform, "x");
      const ty = applyTransform(yv, spec.yTransform, "y");
      xs.push(tx);
      ys.push(ty);
      txs.push(tx);
      tys.push(ty);
    }
    let band: { lo: number[]; hi: number[] } | undefined;
    if (s.band) {
      const lo = s.band.lo.map((v) => applyTransform(v, spec.yTransform, "y"));
      const hi = s.band.hi.map((v) => applyTransform(v, spec.yTransform, "y"));
      for (const v of [...lo, ...hi]) if (Number.isFinite(v)) tys.push(v);
      band = { lo, hi };
    }
    return { ...s, tx: xs, ty: ys, tband: band };
  });

  if (txs.length === 0) {
    throw new TransformError("x", spec.xTransform, NaN);
  }
  let xLo = Math.min(...txs), xHi = Math.max(...txs);
  let yLo = Math.min(...tys), yHi = Math.max(...tys);
  if (xHi === xLo) { xHi += 1; xLo -= 1; }
  if (yHi === yLo) { yHi += 1; yLo -= 1; }
  const padY = 0.06 * (yHi - yLo);
  yLo -= padY; yHi += padY;

  const px = (tx: number) => m.left + ((tx - xLo) / (xHi - xLo)) * innerW;
  const py = (ty: number) => m.top + innerH - ((ty - yLo) / (yHi - yLo)) * innerH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
    `<text x="${W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16" font-weight="bold">${esc(spec.title)}</text>`,
  );

  for (const tv of ticks(xLo, xHi)) {
    const x = px(tv);
    parts.push(
      `<line x1="${x.toFixed(2)}" y1="${m.top}" x2="${x.toFixed(2)}" y2="${m.top + innerH}" stroke="#dddddd" stroke-width="1"/>`,
      `<text x="${x.toFixed(2)}" y="${m.top + innerH + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">${esc(fmtTick(tv, spec.xTransform))}</text>`,
    );
  }
  for (const tv of ticks(yLo, yHi)) {
    const y = py(tv);
    parts.push(
      `<line x1="${m.left}" y1="${y.toFixed(2)}" x2="${m.left + innerW}" y2="${y.toFixed(2)}" stroke="#dddddd" stroke-width="1"/>`,
      `<text x="${m.left - 8}" y="${(y + 4).toFixed(2)}" text-anchor="end" font-family="sans-serif" font-size="11">${esc(fmtTick(tv, spec.yTransform))}</text>`,
    );
  }
  parts.push(
    `<rect x="${m.left}" y="${m.top}" width="${innerW}" height="${innerH}" fill="none" stroke="#333333"/>`,
    `<text x="${m.left + innerW / 2}" y="${H - 14}" text-anchor="middle" font-family="sans-serif" font-size="13">${esc(spec.xLabel)}</text>`,
    `<text x="20" y="${m.top + innerH / 2}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 20 ${m.top + innerH / 2})">${esc(spec.yLabel)}</text>`,
  );

  for (const s of tSeries) {
    if (s.tband) {
      const fwd: string[] = [];
      const back: string[] = [];
      for (let i = 0; i < s.tx.length; i++) {
        const lo = s.tband.lo[i];
        const hi = s.tband.hi[i];
        if (lo === undefined || hi === undefined) continue;
        if (!Number.isFinite(lo) || !Number.isFinite(hi)) continue;
        fwd.push(`${px(s.tx[i]!).toFixed(2)},${py(hi).toFixed(2)}`);
        back.push(`${px(s.tx[i]!).toFixed(2)},${py(lo).toFixed(2)}`);
      }
      if (fwd.length > 1) {
        parts.push(
          `<polygon points="${[...fwd, ...back.reverse()].join(" ")}" fill="${s.color}" opacity="0.15"/>`,
        );
      }
    }
    const pts = s.tx.map((tx, i) => `${px(tx).toFixed(2)},${py(s.ty[i]!).toFixed(2)}`);
    if (pts.length > 1) {
      parts.push(
        `<polyline points="${pts.join(" ")}" fill="none" stroke="${s.color}" stroke-width="${s.width ?? 1.6}"${s.dash ? ` stroke-dasharray="${s.dash}"` : ""}/>`,
      );
    }
    if (s.markers || pts.length === 1) {
      for (const p of pts) {
        const [cx, cy] = p.split(",");
        parts.push(`<circle cx="${cx}" cy="${cy}" r="2.4" fill="${s.color}"/>`);
      }
    }
  }

  let ly = m.top + 14;
  for (const s of tSeries) {
    parts.push(
      `<line x1="${m.left + innerW - 150}" y1="${ly - 4}" x2="${m.left + innerW - 126}" y2="${ly - 4}" stroke="${s.color}" stroke-width="2"${s.dash ? ` stroke-dasharray="${s.dash}"` : ""}/>`,
      `<text x="${m.left + innerW - 120}" y="${ly}" font-family="sans-serif" font-size="11">${esc(s.label)}</text>`,
    );
    ly += 16;
  }

  if (spec.annotation) {
    let ay = m.top + innerH - 10 - 13 * (spec.annotation.length - 1);
    for (const line of spec.annotation) {
      parts.push(
        `<text x="${m.left + 8}" y="${ay}" font-family="monospace" font-size="10" fill="#555555">${esc(line)}</text>`,
      );
      ay += 13;
    }
  }
  parts.push("</svg>");
  return parts.join("\n");
}
