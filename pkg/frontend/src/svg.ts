/**
 * Minimal SVG assembly: enough for line charts with ticks and labels,
 * no dependencies. Every figure is a single self-contained <svg> string.
 */

export type Attrs = Record<string, string | number>;

export function el(tag: string, attrs: Attrs, children: string[] = []): string {
  const attrText = Object.entries(attrs)
    .map(([k, v]) => `${k}="${String(v)}"`)
    .join(" ");
  if (children.length === 0) {
    return `<${tag} ${attrText}/>`;
  }
  return `<${tag} ${attrText}>${children.join("")}</${tag}>`;
}

export function textEl(x: number, y: number, content: string, attrs: Attrs = {}): string {
  const base: Attrs = { x: fmt(x), y: fmt(y), "font-size": 11, "font-family": "sans-serif" };
  return el("text", { ...base, ...attrs }, [escapeText(content)]);
}

export function polyline(points: Array<[number, number]>, attrs: Attrs): string {
  const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
  return el("polyline", { points: pts, fill: "none", ...attrs });
}

export function line(x1: number, y1: number, x2: number, y2: number, attrs: Attrs): string {
  return el("line", { x1: fmt(x1), y1: fmt(y1), x2: fmt(x2), y2: fmt(y2), ...attrs });
}

export function circle(cx: number, cy: number, r: number, attrs: Attrs): string {
  return el("circle", { cx: fmt(cx), cy: fmt(cy), r, ...attrs });
}

export function svgDocument(width: number, height: number, body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
    el("rect", { x: 0, y: 0, width, height, fill: "white" }),
    ...body,
    "</svg>",
    "",
  ].join("\n");
}

export function escapeText(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmt(v: number): string {
  return Number.isInteger(v) ? String(v) : v.toFixed(2);
}

/** Axis mapping from data interval to pixel interval, optionally in log10. */
export class Scale {
  private readonly lo: number;
  private readonly hi: number;

  constructor(
    domainLo: number,
    domainHi: number,
    private readonly pixelLo: number,
    private readonly pixelHi: number,
    readonly log: boolean,
  ) {
    if (log && (domainLo <= 0 || domainHi <= 0)) {
      throw new Error("log scale needs a positive domain");
    }
    this.lo = log ? Math.log10(domainLo) : domainLo;
    this.hi = log ? Math.log10(domainHi) : domainHi;
    if (this.lo === this.hi) {
      // a flat domain still needs a nonempty interval to map from
      this.lo -= 0.5;
      this.hi += 0.5;
    }
  }

  map(v: number): number {
    const t = ((this.log ? Math.log10(v) : v) - this.lo) / (this.hi - this.lo);
    return this.pixelLo + t * (this.pixelHi - this.pixelLo);
  }

  /** Decade ticks for log scales, about n evenly spaced ones otherwise. */
  ticks(n = 5): number[] {
    if (this.log) {
      const out: number[] = [];
      for (let e = Math.ceil(this.lo); e <= Math.floor(this.hi); e++) {
        out.push(Math.pow(10, e));
      }
      if (out.length >= 2) return out;
      // fewer than two decades: fall back to endpoints and midpoint
      return [Math.pow(10, this.lo), Math.pow(10, (this.lo + this.hi) / 2), Math.pow(10, this.hi)];
    }
    const out: number[] = [];
    for (let i = 0; i <= n; i++) {
      out.push(this.lo + (i * (this.hi - this.lo)) / n);
    }
    return out;
  }
}

export function tickLabel(v: number): string {
  if (v === 0) return "0";
  const e = Math.log10(Math.abs(v));
  if (e >= -3 && e <= 4) {
    const digits = e < 0 ? Math.min(6, Math.ceil(-e) + 1) : 0;
    return v.toFixed(digits);
  }
  return v.toExponential(0);
}
