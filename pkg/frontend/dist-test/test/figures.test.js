import { test } from "node:test";
import assert from "node:assert/strict";
import { mkdtempSync, readFileSync, writeFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { render } from "../src/figures.js";
import { readCsv, column, ColumnError } from "../src/csv.js";
import { linearFit } from "../src/fit.js";
const here = dirname(fileURLToPath(import.meta.url));
const FIX = join(here, "..", "..", "test", "fixtures");
const outDir = mkdtempSync(join(tmpdir(), "chainlab-plots-"));
const runCsv = (seed) => join(FIX, "run", `trajectory_seed${seed}.csv`);
const summary = join(FIX, "run", "summary.json");
function specFor(kind) {
    switch (kind) {
        case "decay":
            return { kind, inputs: [runCsv(0), runCsv(1), summary],
                output: join(outDir, "decay.svg") };
        case "spreading":
            return { kind, inputs: [runCsv(0), summary],
                output: join(outDir, "spreading.svg") };
        case "lightcone":
            return { kind, inputs: [runCsv(0), runCsv(1), summary],
                output: join(outDir, "lightcone.svg") };
        case "mc-linearity":
            return { kind, inputs: [join(FIX, "mc", "mc_small_denominator.csv")],
                output: join(outDir, "mc_linearity.svg") };
        case "interval-tail":
            return { kind, inputs: [join(FIX, "mc", "mc_interval_tail.csv")],
                output: join(outDir, "interval_tail.svg") };
    }
}
const ALL_KINDS = ["decay", "spreading", "lightcone",
    "mc-linearity", "interval-tail"];
test("all five figure kinds render from the pinned run directory", () => {
    for (const kind of ALL_KINDS) {
        const result = render(specFor(kind));
        assert.ok(existsSync(result.output), `${kind} wrote ${result.output}`);
        const svg = readFileSync(result.output, "utf-8");
        assert.ok(svg.startsWith("<svg"), `${kind} produces SVG`);
        assert.ok(svg.includes("polyline"), `${kind} has at least one series`);
        console.log(`[ACCEPT] plot_${kind}: PASS (${result.output})`);
    }
});
test("decay figure for a g=0 run shows zero slope", () => {
    const spec = {
        kind: "decay",
        inputs: [join(FIX, "run_g0", "trajectory_seed0.csv"),
            join(FIX, "run_g0", "summary.json")],
        output: join(outDir, "decay_g0.svg"),
    };
    const result = render(spec);
    const fit = result.fits["trajectory_seed0.csv"];
    assert.ok(Math.abs(fit.slope) < 1e-6, `|slope| = ${Math.abs(fit.slope)} < 1e-6`);
    console.log(`[ACCEPT] plot_decay_zero_slope: PASS (|slope| = ${Math.abs(fit.slope).toExponential(2)})`);
});
test("rendering is deterministic and idempotent", () => {
    const spec = specFor("decay");
    const first = render(spec).svg;
    const second = render(spec).svg;
    assert.equal(first, second);
    // inputs untouched
    const before = readFileSync(runCsv(0), "utf-8");
    render(spec);
    assert.equal(readFileSync(runCsv(0), "utf-8"), before);
});
test("figure annotation embeds run metadata", () => {
    const svg = render(specFor("decay")).svg;
    assert.ok(svg.includes("kind=KG"), "annotation names the model");
    assert.ok(svg.includes("seeds=2"), "annotation names the ensemble size");
});
test("missing column raises a named-column error", () => {
    const bad = join(FIX, "mc", "mc_small_denominator.csv");
    assert.throws(() => {
        render({ kind: "decay", inputs: [bad], output: join(outDir, "x.svg") });
    }, (err) => err instanceof ColumnError && /'t' not found/.test(String(err)));
});
test("empty input file raises a named-column error", () => {
    const empty = join(outDir, "empty.csv");
    writeFileSync(empty, "");
    assert.throws(() => {
        render({ kind: "mc-linearity", inputs: [empty],
            output: join(outDir, "y.svg") });
    }, (err) => err instanceof ColumnError);
});
test("threshold overlay sits below M(t) on the pinned g=1 run", () => {
    const t = readCsv(runCsv(0));
    const ts = column(t, "t");
    const M = column(t, "M");
    const eps = column(t, "eps_threshold");
    for (let i = 0; i < ts.length; i++) {
        if (ts[i] >= 2 && Number.isFinite(eps[i])) {
            assert.ok(M[i] > eps[i], `M > eps at t=${ts[i]}`);
        }
    }
});
test("linear fit recovers a synthetic slope", () => {
    const xs = Array.from({ length: 50 }, (_, i) => i * 0.1);
    const ys = xs.map((x) => 2.5 * x - 1.0);
    const fit = linearFit(xs, ys);
    assert.ok(Math.abs(fit.slope - 2.5) < 1e-12);
    assert.ok(Math.abs(fit.intercept + 1.0) < 1e-12);
    assert.ok(fit.r2 > 0.999999);
});
