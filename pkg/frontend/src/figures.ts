/**
 * The five figure kinds rendered from chainlab's serialized artifacts.
 *
 * Figures consume only the documented CSV/JSON schemas (trajectory CSVs,
 * ensemble summary JSON, Monte Carlo CSVs); nothing links against the
 * simulator.  Rendering is pure: identical inputs give identical bytes.
 */
import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { basename, dirname } from "node:path";

import { readCsv, column, requireColumns, ColumnError, Table } from "./csv.js";
import { linearFit, finitePairs, LineFit } from "./fit.js";
import { renderChart, ChartSpec, Series, AxisTransform } from "./svg.js";

export type FigureKind =
  | "decay"
  | "spreading"
  | "lightcone"
  | "mc-linearity"
  | "interval-tail";

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  title?: string;
  xTransform?: AxisTransform;
  yTransform?: AxisTransform;
  annotation?: string[];
}

export interface RenderResult {
  output: string;
  fits: Record<string, LineFit>;
  svg: string;
}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                 "#8c564b", "#17becf", "#7f7f7f"];

function trajectoryInputs(spec: FigureSpec): { tables: Table[]; meta: string[] } {
  const tables: Table[] = [];
  const meta: string[] = [];
  for (const path of spec.inputs) {
    if (path.endsWith(".json")) {
      const summary = JSON.parse(readFileSync(path, "utf-8"));
      const cfg = summary.config ?? {};
      meta.push(
        `run: kind=${cfg.model?.kind ?? "?"} g=${cfg.model?.g ?? "?"} ` +
        `E0=${cfg.initial?.E0 ?? "?"} T=${cfg.horizon ?? "?"} ` +
        `seeds=${(cfg.ensemble_seeds ?? []).length}`,
      );
      continue;
    }
    const t = readCsv(path);
    requireColumns(t, ["t", "M", "xmax", "q2", "r2", "Htot", "eps_threshold"]);
    tables.push(t);
  }
  if (tables.length === 0) {
    throw new ColumnError(spec.inputs[0] ?? "<none>", "t", []);
  }
  return { tables, meta };
}

function decayFigure(spec: FigureSpec): RenderResult {
  const { tables, meta } = trajectoryInputs(spec);
  const series: Series[] = [];
  const fits: Record<string, LineFit> = {};
  tables.forEach((t, i) => {
    const ts = column(t, "t");
    const M = column(t, "M");
    const mask = ts.map((v, k) => v >= 1 && Number.isFinite(M[k]!));
    const xs = ts.filter((_, k) => mask[k]);
    const ys = M.filter((_, k) => mask[k]);
    series.push({
      x: xs, y: ys, label: basename(t.file).replace(".csv", ""),
      color: PALETTE[i % PALETTE.length]!,
    });
    const fit = linearFit(xs.map(Math.log10), ys.map(Math.log10));
    fits[basename(t.file)] = fit;
  });
  const t0 = tables[0]!;
  const ts = column(t0, "t");
  const eps = column(t0, "eps_threshold");
  const [ex, ey] = finitePairs(ts, eps);
  series.push({
    x: ex, y: ey, label: "threshold eps(t)", color: "#000000", dash: "6 4",
  });
  const slopes = Object.values(fits).map((f) => f.slope);
  const ann = [
    ...meta,
    ...(spec.annotation ?? []),
    `log-log slope(s): ${slopes.map((s) => s.toExponential(2)).join(", ")}`,
  ];
  const chart: ChartSpec = {
    title: spec.title ?? "Wave-packet maximum decay",
    xLabel: spec.xTransform === "lnt34" ? "(ln t)^(3/4)" : "t",
    yLabel: "M(t)",
    xTransform: spec.xTransform ?? "log",
    yTransform: spec.yTransform ?? "log",
    series,
    annotation: ann,
  };
  return finish(spec, chart, fits);
}

function spreadingFigure(spec: FigureSpec): RenderResult {
  const { tables, meta } = trajectoryInputs(spec);
  const t0 = tables[0]!;
  const ts = column(t0, "t");
  const q2 = column(t0, "q2");
  const r2 = column(t0, "r2");
  const mask = ts.map((v, k) => v >= 1 && q2[k]! > 0);
  const xs = ts.filter((_, k) => mask[k]);
  const series: Series[] = [
    { x: xs, y: q2.filter((_, k) => mask[k]), label: "q2(t)",
      color: PALETTE[0]! },
    { x: xs, y: r2.filter((_, k) => mask[k]).map((v) => v * v),
      label: "r2(t)^2", color: PALETTE[1]!, dash: "4 3" },
  ];
  const chart: ChartSpec = {
    title: spec.title ?? "Spreading: second moment vs participation ratio",
    xLabel: "t", yLabel: "q2, r2^2",
    xTransform: spec.xTransform ?? "log",
    yTransform: spec.yTransform ?? "log",
    series,
    annotation: [...meta, ...(spec.annotation ?? [])],
  };
  return finish(spec, chart, {});
}

function lightconeFigure(spec: FigureSpec): RenderResult {
  const { tables, meta } = trajectoryInputs(spec);
  const series: Series[] = tables.map((t, i) => {
    const ts = column(t, "t");
    const M = column(t, "M");
    const xm = column(t, "xmax");
    const xs: number[] = [];
    const ys: number[] = [];
    for (let k = 0; k < ts.length; k++) {
      if (ts[k]! >= 1) {
        xs.push(ts[k]!);
        ys.push((M[k]! * Math.abs(xm[k]!)) / ts[k]!);
      }
    }
    return { x: xs, y: ys, label: basename(t.file).replace(".csv", ""),
             color: PALETTE[i % PALETTE.length]! };
  });
  const chart: ChartSpec = {
    title: spec.title ?? "Light-cone ratio M(t)|x(t)|/t",
    xLabel: "t", yLabel: "M |x| / t",
    xTransform: spec.xTransform ?? "log",
    yTransform: spec.yTransform ?? "linear",
    series,
    annotation: [...meta, ...(spec.annotation ?? [])],
  };
  return finish(spec, chart, {});
}

function mcLinearityFigure(spec: FigureSpec): RenderResult {
  const t = readCsv(spec.inputs[0] ?? "<none>");
  requireColumns(t, ["delta", "estimate", "ci_lo", "ci_hi"]);
  const d = column(t, "delta");
  const est = column(t, "estimate");
  const lo = column(t, "ci_lo");
  const hi = column(t, "ci_hi");
  const ratio = est.map((v, k) => v / d[k]!);
  const series: Series[] = [{
    x: d, y: ratio, label: "P(|Delta|<=d)/d", color: PALETTE[0]!, markers: true,
    band: { lo: lo.map((v, k) => v / d[k]!), hi: hi.map((v, k) => v / d[k]!) },
  }];
  const fit = linearFit(d.map(Math.log10), ratio);
  const chart: ChartSpec = {
    title: spec.title ?? "Small-denominator probability linearity",
    xLabel: "delta", yLabel: "estimate / delta",
    xTransform: spec.xTransform ?? "log",
    yTransform: spec.yTransform ?? "linear",
    series,
    annotation: [...(spec.annotation ?? []),
                 `ratio drift per decade: ${fit.slope.toExponential(2)}`],
  };
  return finish(spec, chart, { ratio_vs_logdelta: fit });
}

function intervalTailFigure(spec: FigureSpec): RenderResult {
  const t = readCsv(spec.inputs[0] ?? "<none>");
  requireColumns(t, ["delta", "ell", "estimate"]);
  const d = column(t, "delta");
  const ell = column(t, "ell");
  const est = column(t, "estimate");
  const deltas = [...new Set(d)].sort((a, b) => b - a);
  const series: Series[] = [];
  const fits: Record<string, LineFit> = {};
  deltas.forEach((dv, i) => {
    const xs: number[] = [];
    const ys: number[] = [];
    for (let k = 0; k < d.length; k++) {
      // zero-count tails cannot sit on a log axis; they are simply not plotted
      if (d[k] === dv && est[k]! > 0) {
        xs.push(ell[k]!);
        ys.push(est[k]!);
      }
    }
    series.push({ x: xs, y: ys, label: `delta=${dv}`,
                  color: PALETTE[i % PALETTE.length]!, markers: true });
    fits[`delta=${dv}`] = linearFit(xs, ys.map(Math.log));
  });
  const ann = Object.entries(fits).map(
    ([k, f]) => `${k}: log-tail slope ${f.slope.toFixed(3)}, R2 ${f.r2.toFixed(3)}`,
  );
  const chart: ChartSpec = {
    title: spec.title ?? "Resonant interval tail P(|R| >= l)",
    xLabel: "l", yLabel: "P(|R| >= l)",
    xTransform: spec.xTransform ?? "linear",
    yTransform: spec.yTransform ?? "log",
    series,
    annotation: [...(spec.annotation ?? []), ...ann],
  };
  return finish(spec, chart, fits);
}

function finish(spec: FigureSpec, chart: ChartSpec,
                fits: Record<string, LineFit>): RenderResult {
  const svg = renderChart(chart);
  mkdirSync(dirname(spec.output), { recursive: true });
  writeFileSync(spec.output, svg);
  return { output: spec.output, fits, svg };
}

export function render(spec: FigureSpec): RenderResult {
  if (!spec.inputs || spec.inputs.length === 0) {
    throw new Error("figure spec needs at least one input");
  }
  switch (spec.kind) {
    case "decay":
      return decayFigure(spec);
    case "spreading":
      return spreadingFigure(spec);
    case "lightcone":
      return lightconeFigure(spec);
    case "mc-linearity":
      return mcLinearityFigure(spec);
    case "interval-tail":
      return intervalTailFigure(spec);
    default:
      throw new Error(`unknown figure kind '${(spec as FigureSpec).kind}'`);
  }
}
