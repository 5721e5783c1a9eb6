import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  buildElbow, buildEnvBox, buildEtaSweep, buildGammaQuantiles,
} from "../src/figures.js";
import { EmptyFilterError, parseElbowCsv, parseResultsCsv } from "../src/schema.js";

const RESULTS = parseResultsCsv(
  readFileSync(new URL("fixtures/results_golden.csv", import.meta.url), "utf-8"));
const ELBOW = parseElbowCsv(
  readFileSync(new URL("fixtures/elbow_golden.csv", import.meta.url), "utf-8"));

/** Reference quantile, written independently of src/stats.ts. */
function refQuantile(values: number[], p: number): number {
  const s = values.slice().sort((a, b) => b - a).reverse();
  const pos = p * (s.length - 1);
  const base = Math.trunc(pos);
  if (base === s.length - 1) return s[base];
  return s[base] + (s[base + 1] - s[base]) * (pos - base);
}

describe("buildEnvBox", () => {
  it("groups per gamma with one box per method", () => {
    const fig = buildEnvBox(RESULTS);
    expect(fig.groups.map((g) => g.gamma)).toEqual([0, 1, 5]);
    for (const group of fig.groups) {
      expect(group.boxes.map((b) => b.method)).toEqual(["cirrl", "cirrl_oracle"]);
      for (const box of group.boxes) {
        // 3 envs x 3 seeds per (gamma, method) slice in the golden run
        expect(box.stats.n).toBe(9);
        expect(box.stats.q1).toBeLessThanOrEqual(box.stats.median);
        expect(box.stats.median).toBeLessThanOrEqual(box.stats.q3);
      }
    }
  });

  it("honors the method filter and rejects empty slices", () => {
    const fig = buildEnvBox(RESULTS, { method: "cirrl" });
    expect(fig.groups.every((g) => g.boxes.length === 1)).toBe(true);
    expect(() => buildEnvBox(RESULTS, { method: "nope" }))
      .toThrowError(EmptyFilterError);
    expect(() => buildEnvBox(RESULTS, { gamma: 123 }))
      .toThrowError(EmptyFilterError);
  });

  it("matches quartiles recomputed from the raw slice", () => {
    const fig = buildEnvBox(RESULTS, { method: "cirrl", gamma: 1 });
    const values = RESULTS.filter((r) => r.method === "cirrl" && r.gamma === 1
      && r.metric.startsWith("env_mse_")).map((r) => r.value);
    const box = fig.groups[0].boxes[0].stats;
    expect(box.median).toBe(refQuantile(values, 0.5));
    expect(box.q1).toBe(refQuantile(values, 0.25));
    expect(box.q3).toBe(refQuantile(values, 0.75));
  });
});

describe("buildElbow", () => {
  it("keeps one line per seed plus the seed-median", () => {
    const fig = buildElbow(ELBOW);
    expect(fig.dims).toEqual([1, 2, 3]);
    expect(fig.seeds.length).toBe(3);
    fig.dims.forEach((dim, i) => {
      const losses = ELBOW.filter((r) => r.dim === dim)
        .map((r) => r.final_loss as number);
      expect(fig.medianLoss[i]).toBe(refQuantile(losses, 0.5));
    });
  });

  it("rejects an empty table", () => {
    expect(() => buildElbow([])).toThrowError(EmptyFilterError);
  });
});

describe("buildEtaSweep", () => {
  it("emits one series per (method, gamma, family) with median MSE", () => {
    const fig = buildEtaSweep(RESULTS, { family: "gaussian" });
    const erm = fig.series.find((s) => s.method === "erm");
    expect(erm).toBeDefined();
    expect(erm?.gamma).toBeNull();
    expect(erm?.etas).toEqual([0, 2]);
    const raw = RESULTS.filter((r) => r.method === "erm" && r.metric === "ood_mse"
      && r.family === "gaussian" && r.eta === 2).map((r) => r.value);
    expect(erm?.medianMse[1]).toBe(refQuantile(raw, 0.5));
    const cirrlSeries = fig.series.filter((s) => s.method === "cirrl");
    expect(cirrlSeries.map((s) => s.gamma)).toEqual([0, 1, 5]);
  });

  it("rejects empty filter results", () => {
    expect(() => buildEtaSweep(RESULTS, { family: "student_t" }))
      .toThrowError(EmptyFilterError);
  });
});

describe("buildGammaQuantiles", () => {
  it("computes every band from the raw per-gamma values", () => {
    const fig = buildGammaQuantiles(RESULTS, { family: "chi2" });
    expect(fig.method).toBe("cirrl");
    expect(fig.gammas).toEqual([0, 1, 5]);
    expect(fig.levels).toEqual([0, 0.1, 0.25, 0.5, 0.75, 0.9, 1]);
    fig.gammas.forEach((gamma, gi) => {
      const values = RESULTS.filter((r) => r.method === "cirrl"
        && r.metric === "ood_mse" && r.family === "chi2" && r.gamma === gamma)
        .map((r) => r.value);
      fig.levels.forEach((p, pi) => {
        expect(fig.bands[pi][gi]).toBe(refQuantile(values, p));
      });
      const refMean = values.reduce((a, v) => a + v, 0) / values.length;
      expect(fig.mean[gi]).toBeCloseTo(refMean, 12);
    });
  });

  it("orders bands monotonically in the quantile level", () => {
    const fig = buildGammaQuantiles(RESULTS);
    fig.gammas.forEach((_, gi) => {
      for (let pi = 1; pi < fig.levels.length; pi++) {
        expect(fig.bands[pi][gi]).toBeGreaterThanOrEqual(fig.bands[pi - 1][gi]);
      }
    });
  });

  it("rejects a method with no gamma-indexed OOD rows", () => {
    expect(() => buildGammaQuantiles(RESULTS, { method: "erm" }))
      .toThrowError(EmptyFilterError);
  });
});
