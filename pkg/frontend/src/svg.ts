import {
  ElbowFigure, EnvBoxFigure, EtaSweepFigure, Figure, GammaQuantilesFigure,
} from "./figures.js";

const WIDTH = 640;
const HEIGHT = 480;
const MARGIN = { top: 28, right: 24, bottom: 48, left: 64 };

const PALETTE = [
  "#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2",
];

interface Scale {
  (v: number): number;
  min: number;
  max: number;
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  const fn = ((v: number) => outLo + ((v - lo) / span) * (outHi - outLo)) as Scale;
  fn.min = lo;
  fn.max = hi;
  return fn;
}

/** Tick positions using a 1/2/5 step that covers [lo, hi]. */
function ticks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo || 1;
  const raw = span / count;
  const mag = 10 ** Math.floor(Math.log10(raw));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => span / s <= count) ?? mag * 10;
  const first = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = first; v <= hi + step * 1e-9; v += step) {
    out.push(Number(v.toPrecision(12)));
  }
  return out;
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(6)));
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

class Canvas {
  private parts: string[] = [];

  add(tag: string, attrs: Record<string, string | number>, text?: string): void {
    const a = Object.entries(attrs)
      .map(([k, v]) => `${k}="${v}"`).join(" ");
    this.parts.push(text === undefined
      ? `<${tag} ${a}/>`
      : `<${tag} ${a}>${esc(text)}</${tag}>`);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke = "#333",
       extra: Record<string, string | number> = {}): void {
    this.add("line", { x1, y1, x2, y2, stroke, "stroke-width": 1, ...extra });
  }

  text(x: number, y: number, s: string,
       extra: Record<string, string | number> = {}): void {
    this.add("text", {
      x, y, "font-family": "sans-serif", "font-size": 11, fill: "#333", ...extra,
    }, s);
  }

  path(points: [number, number][], stroke: string,
       extra: Record<string, string | number> = {}): void {
    const d = points.map(([x, y], i) => `${i === 0 ? "M" : "L"}${x},${y}`).join("");
    this.add("path", { d, fill: "none", stroke, "stroke-width": 1.5, ...extra });
  }

  polygon(points: [number, number][], fill: string, opacity: number): void {
    this.add("polygon", {
      points: points.map(([x, y]) => `${x},${y}`).join(" "),
      fill,
      "fill-opacity": opacity,
      stroke: "none",
    });
  }

  render(title: string): string {
    return [
      `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">`,
      `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
      `<title>${esc(title)}</title>`,
      ...this.parts,
      "</svg>",
    ].join("\n");
  }
}

function drawAxes(c: Canvas, xs: Scale, ys: Scale, xLabel: string,
                  yLabel: string): void {
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  c.line(x0, y0, x1, y0);
  c.line(x0, y0, x0, y1);
  for (const t of ticks(xs.min, xs.max)) {
    c.line(xs(t), y0, xs(t), y0 + 4);
    c.text(xs(t), y0 + 16, fmt(t), { "text-anchor": "middle" });
  }
  for (const t of ticks(ys.min, ys.max)) {
    c.line(x0 - 4, ys(t), x0, ys(t));
    c.text(x0 - 6, ys(t) + 3, fmt(t), { "text-anchor": "end" });
    c.line(x0, ys(t), x1, ys(t), "#eee");
  }
  c.text((x0 + x1) / 2, HEIGHT - 12, xLabel, { "text-anchor": "middle" });
  c.text(14, (y0 + y1) / 2, yLabel, {
    "text-anchor": "middle",
    transform: `rotate(-90 14 ${(y0 + y1) / 2})`,
  });
}

function yRange(values: number[]): [number, number] {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const pad = (hi - lo || Math.abs(hi) || 1) * 0.05;
  return [lo - pad, hi + pad];
}

function legend(c: Canvas, labels: string[], colors: string[]): void {
  labels.forEach((label, i) => {
    const x = MARGIN.left + 8;
    const y = MARGIN.top + 14 * i + 4;
    c.line(x, y - 4, x + 16, y - 4, colors[i], { "stroke-width": 3 });
    c.text(x + 22, y, label);
  });
}

function renderEnvBox(fig: EnvBoxFigure): string {
  const c = new Canvas();
  const methods = [...new Set(
    fig.groups.flatMap((g) => g.boxes.map((b) => b.method)))].sort();
  const color = new Map(methods.map((m, i) => [m, PALETTE[i % PALETTE.length]]));
  const slots = fig.groups.flatMap((g) => g.boxes.map((b) => ({ gamma: g.gamma, ...b })));
  const allValues = slots.flatMap((s) =>
    [s.stats.whiskerLo, s.stats.whiskerHi, ...s.stats.outliers]);
  const [lo, hi] = yRange(allValues);
  const xs = linearScale(-0.5, slots.length - 0.5, MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(lo, hi, HEIGHT - MARGIN.bottom, MARGIN.top);
  drawAxes(c, xs, ys, "gamma", fig.yLabel);
  const half = Math.min(18, (xs(1) - xs(0)) * 0.35);
  slots.forEach((s, i) => {
    const cx = xs(i);
    const col = color.get(s.method) ?? PALETTE[0];
    c.line(cx, ys(s.stats.whiskerLo), cx, ys(s.stats.q1), col);
    c.line(cx, ys(s.stats.q3), cx, ys(s.stats.whiskerHi), col);
    c.add("rect", {
      x: cx - half,
      y: ys(s.stats.q3),
      width: 2 * half,
      height: Math.max(ys(s.stats.q1) - ys(s.stats.q3), 0.5),
      fill: col,
      "fill-opacity": 0.35,
      stroke: col,
    });
    c.line(cx - half, ys(s.stats.median), cx + half, ys(s.stats.median), col,
           { "stroke-width": 2 });
    for (const v of s.stats.outliers) {
      c.add("circle", { cx, cy: ys(v), r: 2, fill: col });
    }
    c.text(cx, HEIGHT - MARGIN.bottom + 28, fmt(s.gamma),
           { "text-anchor": "middle" });
  });
  legend(c, methods, methods.map((m) => color.get(m) as string));
  return c.render("per-environment MSE by gamma and method");
}

function renderElbow(fig: ElbowFigure): string {
  const c = new Canvas();
  const losses = fig.seeds.flatMap((s) =>
    s.loss.filter((v): v is number => v !== null)).concat(fig.medianLoss);
  const [lo, hi] = yRange(losses);
  const xs = linearScale(Math.min(...fig.dims), Math.max(...fig.dims),
                         MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(lo, hi, HEIGHT - MARGIN.bottom, MARGIN.top);
  drawAxes(c, xs, ys, "latent dimension", "final training loss");
  for (const s of fig.seeds) {
    const pts = fig.dims.flatMap((d, i) =>
      s.loss[i] === null ? [] : [[xs(d), ys(s.loss[i] as number)] as [number, number]]);
    c.path(pts, "#999", { "stroke-opacity": 0.5, "stroke-width": 1 });
  }
  c.path(fig.dims.map((d, i) => [xs(d), ys(fig.medianLoss[i])]), PALETTE[0],
         { "stroke-width": 2.5 });
  fig.dims.forEach((d, i) => {
    c.add("circle", { cx: xs(d), cy: ys(fig.medianLoss[i]), r: 3, fill: PALETTE[0] });
  });
  return c.render("training-loss elbow over latent dimension");
}

function renderEtaSweep(fig: EtaSweepFigure): string {
  const c = new Canvas();
  const values = fig.series.flatMap((s) => s.medianMse);
  const etas = fig.series.flatMap((s) => s.etas);
  const [lo, hi] = yRange(values);
  const xs = linearScale(Math.min(...etas), Math.max(...etas),
                         MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(lo, hi, HEIGHT - MARGIN.bottom, MARGIN.top);
  drawAxes(c, xs, ys, "eta", "median OOD MSE");
  const labels: string[] = [];
  const colors: string[] = [];
  fig.series.forEach((s, i) => {
    const col = PALETTE[i % PALETTE.length];
    c.path(s.etas.map((e, j) => [xs(e), ys(s.medianMse[j])]), col);
    s.etas.forEach((e, j) => {
      c.add("circle", { cx: xs(e), cy: ys(s.medianMse[j]), r: 2.5, fill: col });
    });
    const gammaPart = s.gamma === null ? "" : ` γ=${fmt(s.gamma)}`;
    labels.push(`${s.method}${gammaPart} (${s.family})`);
    colors.push(col);
  });
  legend(c, labels, colors);
  return c.render("OOD MSE against intervention strength");
}

function renderGammaQuantiles(fig: GammaQuantilesFigure): string {
  const c = new Canvas();
  const values = fig.bands.flat().concat(fig.mean);
  const [lo, hi] = yRange(values);
  const xs = linearScale(Math.min(...fig.gammas), Math.max(...fig.gammas),
                         MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(lo, hi, HEIGHT - MARGIN.bottom, MARGIN.top);
  drawAxes(c, xs, ys, "gamma", `OOD MSE (${fig.method})`);
  // nested bands: (min,max), (10,90), (25,75) then the median line
  const pairs: [number, number, number][] = [[0, 6, 0.12], [1, 5, 0.2], [2, 4, 0.3]];
  for (const [loIdx, hiIdx, opacity] of pairs) {
    const upper = fig.gammas.map((g, i) =>
      [xs(g), ys(fig.bands[hiIdx][i])] as [number, number]);
    const lower = fig.gammas.map((g, i) =>
      [xs(g), ys(fig.bands[loIdx][i])] as [number, number]).reverse();
    c.polygon([...upper, ...lower], PALETTE[0], opacity);
  }
  const medianIdx = fig.levels.indexOf(0.5);
  c.path(fig.gammas.map((g, i) => [xs(g), ys(fig.bands[medianIdx][i])]),
         PALETTE[0], { "stroke-width": 2.5 });
  c.path(fig.gammas.map((g, i) => [xs(g), ys(fig.mean[i])]), "#333",
         { "stroke-dasharray": "6 4" });
  legend(c, ["median", "mean (dashed)"], [PALETTE[0], "#333"]);
  return c.render("OOD-MSE quantile bands over gamma");
}

export function renderSvg(fig: Figure): string {
  switch (fig.kind) {
    case "env_box":
      return renderEnvBox(fig);
    case "elbow":
      return renderElbow(fig);
    case "eta_sweep":
      return renderEtaSweep(fig);
    case "gamma_quantiles":
      return renderGammaQuantiles(fig);
  }
}
