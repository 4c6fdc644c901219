/**
 * The three figure kinds rendered from the harness CSVs.
 *
 * This package is a pure reader of the pinned CSV + metadata formats: it
 * never recomputes a statistic. Fitted numbers shown on a figure (the
 * convergence slope, the decay rate, the sweep exponents) come from the
 * metadata JSON written next to the CSV; reference guide lines are drawn
 * at the fixed orders 2/3 and 1.
 */

import { column, DataError, parseCsv } from "./csv.js";
import { circle, line, polyline, Scale, svgDocument, textEl, tickLabel } from "./svg.js";

export type FigureKind = "convergence" | "ergodic-decay" | "delta-sweep";

export interface FigureSpec {
  kind: FigureKind;
  inputCsv: string;
  outputPath: string;
  metadataPath?: string;
}

export interface Metadata {
  results?: Record<string, unknown>;
}

const W = 560;
const H = 420;
const M = { left: 70, right: 18, top: 30, bottom: 48 };

interface Frame {
  x: Scale;
  y: Scale;
  body: string[];
}

function frame(
  xLo: number,
  xHi: number,
  yLo: number,
  yHi: number,
  logX: boolean,
  logY: boolean,
  xLabel: string,
  yLabel: string,
  title: string,
): Frame {
  const x = new Scale(xLo, xHi, M.left, W - M.right, logX);
  const y = new Scale(yLo, yHi, H - M.bottom, M.top, logY);
  const body: string[] = [];
  // axes
  body.push(line(M.left, M.top, M.left, H - M.bottom, { stroke: "black" }));
  body.push(line(M.left, H - M.bottom, W - M.right, H - M.bottom, { stroke: "black" }));
  for (const t of x.ticks()) {
    const px = x.map(t);
    body.push(line(px, H - M.bottom, px, H - M.bottom + 4, { stroke: "black" }));
    body.push(textEl(px, H - M.bottom + 16, tickLabel(t), { "text-anchor": "middle" }));
  }
  for (const t of y.ticks()) {
    const py = y.map(t);
    body.push(line(M.left - 4, py, M.left, py, { stroke: "black" }));
    body.push(textEl(M.left - 7, py + 4, tickLabel(t), { "text-anchor": "end" }));
  }
  body.push(textEl(W / 2, H - 10, xLabel, { "text-anchor": "middle" }));
  body.push(
    textEl(16, H / 2, yLabel, {
      "text-anchor": "middle",
      transform: `rotate(-90 16 ${H / 2})`,
    }),
  );
  body.push(textEl(W / 2, 16, title, { "text-anchor": "middle", "font-size": 13 }));
  return { x, y, body };
}

/** Guide through (x0, y0) with the given log-log slope, drawn dashed. */
function slopeGuide(f: Frame, x0: number, y0: number, xs: number[], slope: number, label: string): void {
  const pts: Array<[number, number]> = xs.map((x) => [
    f.x.map(x),
    f.y.map(y0 * Math.pow(x / x0, slope)),
  ]);
  f.body.push(polyline(pts, { stroke: "#999", "stroke-dasharray": "5 4" }));
  const [lx, ly] = pts[pts.length - 1];
  f.body.push(textEl(lx - 4, ly - 5, label, { "text-anchor": "end", fill: "#666" }));
}

function series(f: Frame, xs: number[], ys: number[], color: string): void {
  const pts: Array<[number, number]> = xs.map((x, i) => [f.x.map(x), f.y.map(ys[i])]);
  f.body.push(polyline(pts, { stroke: color, "stroke-width": 1.5 }));
  for (const [px, py] of pts) {
    f.body.push(circle(px, py, 3, { fill: color }));
  }
}

function annotation(f: Frame, lines: string[]): void {
  lines.forEach((text, i) => {
    f.body.push(textEl(M.left + 10, M.top + 16 + 15 * i, text, { fill: "#333" }));
  });
}

function resultNumber(meta: Metadata | null, key: string): number | null {
  const v = meta?.results?.[key];
  return typeof v === "number" && Number.isFinite(v) ? v : null;
}

export function renderConvergence(csvText: string, meta: Metadata | null): string {
  const table = parseCsv(csvText);
  const eps = column(table, "epsilon");
  const err = column(table, "error");
  const se = column(table, "se");
  if (eps.length < 2) {
    throw new DataError(`convergence figure needs at least 2 rows, got ${eps.length}`);
  }
  const yLo = Math.min(...err.map((e, i) => Math.max(e - se[i], e / 4)));
  const yHi = Math.max(...err.map((e, i) => e + se[i]));
  const f = frame(
    Math.min(...eps), Math.max(...eps), yLo, yHi, true, true,
    "scale separation epsilon", "sup-t mean squared deviation",
    "Strong convergence of the slow component",
  );
  // anchor the reference orders at the coarsest point
  const i0 = eps.indexOf(Math.max(...eps));
  slopeGuide(f, eps[i0], err[i0], eps, 2 / 3, "slope 2/3");
  slopeGuide(f, eps[i0], err[i0], eps, 1, "slope 1");
  series(f, eps, err, "#1f77b4");
  for (let i = 0; i < eps.length; i++) {
    const px = f.x.map(eps[i]);
    f.body.push(
      line(px, f.y.map(err[i] + se[i]), px, f.y.map(Math.max(err[i] - se[i], err[i] / 4)), {
        stroke: "#1f77b4",
      }),
    );
  }
  const slope = resultNumber(meta, "slope");
  if (slope !== null) {
    annotation(f, [`fitted slope ${slope.toFixed(2)}`]);
  }
  return svgDocument(W, H, f.body);
}

export function renderErgodicDecay(csvText: string, meta: Metadata | null): string {
  const table = parseCsv(csvText);
  const s = column(table, "s");
  const dev = column(table, "deviation");
  const floor = column(table, "mc_floor");
  const positive = dev.filter((v) => v > 0);
  if (positive.length === 0) {
    throw new DataError("decay figure needs positive deviations for a log axis");
  }
  const yLo = Math.min(...positive, ...floor.filter((v) => v > 0));
  const yHi = Math.max(...positive);
  const f = frame(
    Math.min(...s), Math.max(...s), yLo, yHi, false, true,
    "frozen time s", "|E b(Y_s) - averaged drift|",
    "Relaxation of the frozen fast dynamics",
  );
  const kept = s.map((_, i) => i).filter((i) => dev[i] > 0);
  series(f, kept.map((i) => s[i]), kept.map((i) => dev[i]), "#d62728");
  const floorKept = s.map((_, i) => i).filter((i) => floor[i] > 0);
  f.body.push(
    polyline(
      floorKept.map((i) => [f.x.map(s[i]), f.y.map(floor[i])]),
      { stroke: "#999", "stroke-dasharray": "3 3" },
    ),
  );
  f.body.push(textEl(W - M.right - 6, f.y.map(floor[floorKept[floorKept.length - 1]]) - 6, "MC floor", {
    "text-anchor": "end", fill: "#666",
  }));
  const rate = resultNumber(meta, "decay_rate");
  const notes: string[] = [];
  if (rate !== null) {
    notes.push(`fitted rate ${rate.toFixed(2)}`);
    const pts: Array<[number, number]> = kept
      .map((i): [number, number] => [s[i], dev[kept[0]] * Math.exp(-rate * (s[i] - s[kept[0]]))])
      .filter(([, v]) => v >= yLo)
      .map(([sv, v]) => [f.x.map(sv), f.y.map(v)]);
    f.body.push(polyline(pts, { stroke: "#555", "stroke-dasharray": "6 4" }));
  }
  const beta2 = resultNumber(meta, "beta_over_2");
  if (beta2 !== null) {
    notes.push(`dissipativity rate beta/2 = ${beta2.toFixed(2)}`);
  }
  if (notes.length > 0) annotation(f, notes);
  return svgDocument(W, H, f.body);
}

export function renderDeltaSweep(csvText: string, meta: Metadata | null): string {
  const table = parseCsv(csvText);
  const delta = column(table, "delta");
  const yGap = column(table, "y_gap");
  const xGap = column(table, "x_gap");
  const all = [...yGap, ...xGap].filter((v) => v > 0);
  if (all.length === 0) {
    throw new DataError("delta-sweep figure needs positive gaps for log axes");
  }
  const f = frame(
    Math.min(...delta), Math.max(...delta), Math.min(...all), Math.max(...all), true, true,
    "block length delta", "sup-t mean squared gap",
    "Block-frozen auxiliary gaps",
  );
  const i0 = delta.indexOf(Math.min(...delta));
  slopeGuide(f, delta[i0], yGap[i0], delta, 2 / 3, "slope 2/3");
  slopeGuide(f, delta[i0], yGap[i0], delta, 1, "slope 1");
  series(f, delta, yGap, "#2ca02c");
  series(f, delta, xGap, "#9467bd");
  f.body.push(textEl(W - M.right - 6, f.y.map(yGap[yGap.length - 1]) - 8, "fast gap", {
    "text-anchor": "end", fill: "#2ca02c",
  }));
  f.body.push(textEl(W - M.right - 6, f.y.map(xGap[xGap.length - 1]) - 8, "slow gap", {
    "text-anchor": "end", fill: "#9467bd",
  }));
  const notes: string[] = [];
  const sy = resultNumber(meta, "delta_slope_y");
  const sx = resultNumber(meta, "delta_slope_x");
  if (sy !== null) notes.push(`fast-gap exponent ${sy.toFixed(2)}`);
  if (sx !== null) notes.push(`slow-gap exponent ${sx.toFixed(2)}`);
  if (notes.length > 0) annotation(f, notes);
  return svgDocument(W, H, f.body);
}

const RENDERERS: Record<FigureKind, (csv: string, meta: Metadata | null) => string> = {
  convergence: renderConvergence,
  "ergodic-decay": renderErgodicDecay,
  "delta-sweep": renderDeltaSweep,
};

export function renderFigure(kind: FigureKind, csvText: string, meta: Metadata | null): string {
  const renderer = RENDERERS[kind];
  if (!renderer) {
    throw new DataError(`unknown figure kind '${kind}'`);
  }
  return renderer(csvText, meta);
}
