import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { main, parseArgs, UsageError } from "../src/cli.js";
import { renderConvergence, renderDeltaSweep, renderErgodicDecay, renderFigure } from "../src/figures.js";

function convergenceCsv(nPoints = 6): string {
  // synthetic errors = epsilon exactly, the order-1 reference case
  const lines = ["epsilon,error,se,n_particles,n_reps,seed"];
  for (let k = 4; k < 4 + nPoints; k++) {
    const e = Math.pow(2, -k);
    lines.push(`${e},${e},${e / 50},2000,32,0`);
  }
  return lines.join("\n") + "\n";
}

const DECAY_CSV = [
  "s,deviation,mc_floor",
  ...Array.from({ length: 20 }, (_, i) => {
    const s = i * 0.25;
    return `${s},${9.25 * Math.exp(-2 * s) + 1e-4},${2.5e-3}`;
  }),
].join("\n") + "\n";

const SWEEP_CSV = [
  "delta,y_gap,x_gap",
  ...Array.from({ length: 4 }, (_, i) => {
    const d = Math.pow(2, -6 + i);
    return `${d},${0.02 * d},${0.4 * d * d}`;
  }),
].join("\n") + "\n";

describe("convergence figure", () => {
  it("renders six points to a nonempty svg with both reference guides", () => {
    const svg = renderConvergence(convergenceCsv(6), null);
    expect(svg).toContain("<svg");
    expect(svg.length).toBeGreaterThan(2000);
    expect(svg).toContain("slope 2/3");
    expect(svg).toContain("slope 1");
  });

  it("shows the metadata slope without recomputing it", () => {
    // errors = epsilon exactly would fit slope 1.00; the annotation must
    // nevertheless echo the metadata verbatim
    const honest = renderConvergence(convergenceCsv(), { results: { slope: 1.0 } });
    expect(honest).toContain("fitted slope 1.00");
    const planted = renderConvergence(convergenceCsv(), { results: { slope: 0.42 } });
    expect(planted).toContain("fitted slope 0.42");
    expect(planted).not.toContain("fitted slope 1.00");
  });

  it("omits the annotation when metadata is absent", () => {
    expect(renderConvergence(convergenceCsv(), null)).not.toContain("fitted slope");
  });

  it("fails loudly on a missing error column", () => {
    const broken = convergenceCsv().replace("error", "err");
    expect(() => renderConvergence(broken, null)).toThrow(/missing column 'error'/);
  });
});

describe("ergodic decay figure", () => {
  it("renders the curve, the MC floor and the metadata rate", () => {
    const svg = renderErgodicDecay(DECAY_CSV, {
      results: { decay_rate: 2.09, beta_over_2: 2.0 },
    });
    expect(svg).toContain("MC floor");
    expect(svg).toContain("fitted rate 2.09");
    expect(svg).toContain("beta/2 = 2.00");
  });

  it("requires the deviation column", () => {
    expect(() => renderErgodicDecay("s,mc_floor\n0,1\n", null)).toThrow(
      /missing column 'deviation'/,
    );
  });
});

describe("delta sweep figure", () => {
  it("renders both gap series with exponent annotations from metadata", () => {
    const svg = renderDeltaSweep(SWEEP_CSV, {
      results: { delta_slope_y: 1.15, delta_slope_x: 1.99 },
    });
    expect(svg).toContain("fast gap");
    expect(svg).toContain("slow gap");
    expect(svg).toContain("fast-gap exponent 1.15");
    expect(svg).toContain("slow-gap exponent 1.99");
  });

  it("requires the x_gap column", () => {
    expect(() => renderDeltaSweep("delta,y_gap\n0.1,0.01\n", null)).toThrow(
      /missing column 'x_gap'/,
    );
  });
});

describe("renderFigure dispatch", () => {
  it("rejects unknown kinds", () => {
    expect(() => renderFigure("histogram" as never, convergenceCsv(), null)).toThrow(
      /unknown figure kind/,
    );
  });
});

describe("command line", () => {
  it("parses the three required flags plus optional metadata", () => {
    const args = parseArgs([
      "--kind", "convergence", "--input", "a.csv", "--output", "b.svg",
    ]);
    expect(args.kind).toBe("convergence");
    expect(args.metadata).toBeUndefined();
    expect(() => parseArgs(["--kind", "convergence"])).toThrow(UsageError);
    expect(() => parseArgs(["--kind", "pie", "--input", "a", "--output", "b"])).toThrow(
      /--kind must be one of/,
    );
    expect(() => parseArgs(["--frobnicate", "1"])).toThrow(/unknown flag/);
  });

  it("writes an image file and exits 0 on good input", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-"));
    const csv = join(dir, "convergence.csv");
    const out = join(dir, "fig.svg");
    writeFileSync(csv, convergenceCsv());
    const code = main(["--kind", "convergence", "--input", csv, "--output", out]);
    expect(code).toBe(0);
    expect(readFileSync(out, "utf-8")).toContain("</svg>");
  });

  it("exits nonzero with a column diagnostic on malformed CSV", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-"));
    const csv = join(dir, "broken.csv");
    writeFileSync(csv, "epsilon,se\n0.1,0.01\n");
    const code = main(["--kind", "convergence", "--input", csv, "--output", join(dir, "x.svg")]);
    expect(code).toBe(2);
  });

  it("exits 1 on usage errors and 2 on unreadable input", () => {
    expect(main(["--kind", "nope", "--input", "a", "--output", "b"])).toBe(1);
    expect(main(["--kind", "convergence", "--input", "/definitely/missing.csv",
                 "--output", "/tmp/x.svg"])).toBe(2);
  });
});
