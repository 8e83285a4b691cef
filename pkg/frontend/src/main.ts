#!/usr/bin/env node
/**
 * chainlab-plot: render figures from simulation artifacts.
 *
 * Usage:
 *   chainlab-plot --spec figure.json [--spec more.json ...]
 *
 * Each spec file holds one FigureSpec or an array of them.
 * Exit codes: 0 rendered, 2 bad spec / schema mismatch.
 */
import { readFileSync } from "node:fs";

import { FigureSpec, render } from "./figures.js";
import { ColumnError } from "./csv.js";
import { TransformError } from "./svg.js";

function main(argv: string[]): number {
  const specPaths: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--spec") {
      const p = argv[i + 1];
      if (!p) {
        console.error("--spec needs a path");
        return 2;
      }
      specPaths.push(p);
      i++;
    } else {
      console.error(`unknown argument '${argv[i]}'`);
      return 2;
    }
  }
  if (specPaths.length === 0) {
    console.error("usage: chainlab-plot --spec figure.json [--spec ...]");
    return 2;
  }
  try {
    for (const path of specPaths) {
      const raw = JSON.parse(readFileSync(path, "utf-8"));
      const specs: FigureSpec[] = Array.isArray(raw) ? raw : [raw];
      for (const spec of specs) {
        const result = render(spec);
        const fitNote = Object.entries(result.fits)
          .map(([k, f]) => `${k}: slope ${f.slope.toExponential(3)}`)
          .join("; ");
        console.log(`${spec.kind} -> ${result.output}${fitNote ? ` (${fitNote})` : ""}`);
      }
    }
  } catch (err) {
    if (err instanceof ColumnError || err instanceof TransformError ||
        err instanceof SyntaxError || err instanceof Error) {
      console.error(`error: ${(err as Error).message}`);
      return 2;
    }
    throw err;
  }
  return 0;
}

process.exit(main(process.argv.slice(2)));
