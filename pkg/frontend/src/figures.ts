import { ElbowRow, EmptyFilterError, ResultRow } from "./schema.js";
import { BoxStats, boxStats, mean, median, quantileType7 } from "./stats.js";

export type Kind = "env_box" | "elbow" | "eta_sweep" | "gamma_quantiles";

export const KINDS: readonly Kind[] = [
  "env_box", "elbow", "eta_sweep", "gamma_quantiles",
];

/** Optional row filters shared by the result-table figures. */
export interface Filters {
  method?: string;
  gamma?: number;
  eta?: number;
  family?: string;
}

const QUANTILE_LEVELS = [0, 0.1, 0.25, 0.5, 0.75, 0.9, 1] as const;

export interface EnvBoxFigure {
  kind: "env_box";
  yLabel: string;
  groups: {
    gamma: number;
    boxes: { method: string; stats: BoxStats }[];
  }[];
}

export interface ElbowFigure {
  kind: "elbow";
  dims: number[];
  medianLoss: number[];
  seeds: { seed: number; loss: (number | null)[] }[];
}

export interface EtaSweepFigure {
  kind: "eta_sweep";
  series: {
    method: string;
    gamma: number | null;
    family: string;
    etas: number[];
    medianMse: number[];
  }[];
}

export interface GammaQuantilesFigure {
  kind: "gamma_quantiles";
  method: string;
  gammas: number[];
  /** One row per level in `levels`, aligned with `gammas`. */
  levels: number[];
  bands: number[][];
  mean: number[];
}

export type Figure =
  | EnvBoxFigure
  | ElbowFigure
  | EtaSweepFigure
  | GammaQuantilesFigure;

function applyFilters(rows: ResultRow[], f: Filters): ResultRow[] {
  return rows.filter((r) =>
    (f.method === undefined || r.method === f.method)
    && (f.gamma === undefined || r.gamma === f.gamma)
    && (f.eta === undefined || r.eta === f.eta)
    && (f.family === undefined || r.family === f.family));
}

function finite(rows: ResultRow[]): ResultRow[] {
  return rows.filter((r) => Number.isFinite(r.value));
}

function uniqueSorted(values: number[]): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

/** Per-environment MSE boxes grouped by gamma, one box per method. */
export function buildEnvBox(rows: ResultRow[], filters: Filters = {}): EnvBoxFigure {
  const envRows = finite(applyFilters(rows, filters)).filter(
    (r) => r.metric.startsWith("env_mse_") && r.gamma !== null);
  if (envRows.length === 0) {
    throw new EmptyFilterError(
      "no finite env_mse rows with a gamma value match the filters");
  }
  const gammas = uniqueSorted(envRows.map((r) => r.gamma as number));
  const groups = gammas.map((gamma) => {
    const inGroup = envRows.filter((r) => r.gamma === gamma);
    const methods = [...new Set(inGroup.map((r) => r.method))].sort();
    return {
      gamma,
      boxes: methods.map((method) => ({
        method,
        stats: boxStats(inGroup.filter((r) => r.method === method)
          .map((r) => r.value)),
      })),
    };
  });
  return { kind: "env_box", yLabel: "per-environment MSE", groups };
}

/** Training-loss elbow over latent dimension, one faint line per seed. */
export function buildElbow(rows: ElbowRow[]): ElbowFigure {
  if (rows.length === 0) {
    throw new EmptyFilterError("elbow table has no rows");
  }
  const dims = uniqueSorted(rows.map((r) => r.dim));
  const seeds = uniqueSorted(rows.map((r) => r.seed)).map((seed) => ({
    seed,
    loss: dims.map((dim) => {
      const row = rows.find((r) => r.seed === seed && r.dim === dim);
      return row?.final_loss ?? null;
    }),
  }));
  const medianLoss = dims.map((dim, i) => {
    const losses = seeds.map((s) => s.loss[i])
      .filter((v): v is number => v !== null);
    if (losses.length === 0) {
      throw new EmptyFilterError(`every seed failed at latent dim ${dim}`);
    }
    return median(losses);
  });
  return { kind: "elbow", dims, medianLoss, seeds };
}

/** Median OOD MSE against eta, one series per (method, gamma, family). */
export function buildEtaSweep(rows: ResultRow[], filters: Filters = {}): EtaSweepFigure {
  const oodRows = finite(applyFilters(rows, filters)).filter(
    (r) => r.metric === "ood_mse" && r.eta !== null && r.family !== null);
  if (oodRows.length === 0) {
    throw new EmptyFilterError("no finite ood_mse rows match the filters");
  }
  const keys = new Map<string, { method: string; gamma: number | null; family: string }>();
  for (const r of oodRows) {
    const key = `${r.method}|${r.gamma ?? ""}|${r.family}`;
    if (!keys.has(key)) {
      keys.set(key, { method: r.method, gamma: r.gamma, family: r.family as string });
    }
  }
  const series = [...keys.entries()].sort(([a], [b]) => a.localeCompare(b))
    .map(([, id]) => {
      const mine = oodRows.filter((r) => r.method === id.method
        && r.gamma === id.gamma && r.family === id.family);
      const etas = uniqueSorted(mine.map((r) => r.eta as number));
      return {
        ...id,
        etas,
        medianMse: etas.map((eta) => median(
          mine.filter((r) => r.eta === eta).map((r) => r.value))),
      };
    });
  return { kind: "eta_sweep", series };
}

/** OOD-MSE quantile bands over gamma for one method, plus the mean path. */
export function buildGammaQuantiles(rows: ResultRow[],
                                    filters: Filters = {}): GammaQuantilesFigure {
  const method = filters.method ?? "cirrl";
  const oodRows = finite(applyFilters(rows, { ...filters, method })).filter(
    (r) => r.metric === "ood_mse" && r.gamma !== null);
  if (oodRows.length === 0) {
    throw new EmptyFilterError(
      `no finite ood_mse rows for method ${method} match the filters`);
  }
  const gammas = uniqueSorted(oodRows.map((r) => r.gamma as number));
  const perGamma = gammas.map((gamma) =>
    oodRows.filter((r) => r.gamma === gamma).map((r) => r.value));
  return {
    kind: "gamma_quantiles",
    method,
    gammas,
    levels: [...QUANTILE_LEVELS],
    bands: QUANTILE_LEVELS.map((p) =>
      perGamma.map((values) => quantileType7(values, p))),
    mean: perGamma.map((values) => mean(values)),
  };
}
