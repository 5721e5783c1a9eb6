import Papa from "papaparse";

/** Long-format results table produced by the experiment harness. */
export interface ResultRow {
  run_id: string;
  seed: number;
  method: string;
  /** null when the cell does not apply to the row (e.g. baseline fits). */
  gamma: number | null;
  eta: number | null;
  family: string | null;
  metric: string;
  /** NaN marks a failed sweep cell (see the harness's errors.log). */
  value: number;
}

/** Per-dimension training-loss table from the latent-dimension sweep. */
export interface ElbowRow {
  run_id: string;
  seed: number;
  dim: number;
  final_loss: number | null;
  error: string;
}

export const RESULT_COLUMNS = [
  "run_id", "seed", "method", "gamma", "eta", "family", "metric", "value",
] as const;

export const ELBOW_COLUMNS = [
  "run_id", "seed", "dim", "final_loss", "error",
] as const;

/** Input CSV does not have the expected header. */
export class SchemaError extends Error {}

/** Filters left nothing to plot (schema was fine). */
export class EmptyFilterError extends Error {}

function checkHeader(fields: string[] | undefined, expected: readonly string[],
                     what: string): void {
  const present = new Set(fields ?? []);
  const missing = expected.filter((c) => !present.has(c));
  if (missing.length > 0) {
    throw new SchemaError(
      `${what} is missing column(s): ${missing.join(", ")}`);
  }
}

function parseRows(text: string, what: string,
                   expected: readonly string[]): Record<string, string>[] {
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  checkHeader(parsed.meta.fields, expected, what);
  const hard = parsed.errors.filter((e) => e.code !== "TooFewFields");
  if (hard.length > 0) {
    const e = hard[0];
    throw new SchemaError(`${what}: ${e.message} (row ${e.row})`);
  }
  return parsed.data;
}

function numOrNull(cell: string): number | null {
  return cell === "" ? null : Number(cell);
}

export function parseResultsCsv(text: string): ResultRow[] {
  return parseRows(text, "results CSV", RESULT_COLUMNS).map((r) => ({
    run_id: r.run_id,
    seed: Number(r.seed),
    method: r.method,
    gamma: numOrNull(r.gamma),
    eta: numOrNull(r.eta),
    family: r.family === "" ? null : r.family,
    metric: r.metric,
    value: Number(r.value),
  }));
}

export function parseElbowCsv(text: string): ElbowRow[] {
  return parseRows(text, "elbow CSV", ELBOW_COLUMNS).map((r) => ({
    run_id: r.run_id,
    seed: Number(r.seed),
    dim: Number(r.dim),
    final_loss: r.final_loss === "" || Number.isNaN(Number(r.final_loss))
      ? null : Number(r.final_loss),
    error: r.error ?? "",
  }));
}
