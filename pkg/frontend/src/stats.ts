/** Aggregation helpers for the figure data layer.
 *
 * Quantiles use the linear-interpolation rule (R/numpy type 7): the
 * p-quantile of n sorted values sits at virtual index (n-1)·p and is
 * interpolated as lo + (hi - lo)·frac, matching numpy's default so the
 * dump-json output is reproducible bit-for-bit from the raw CSV.
 */

export function quantileType7(values: number[], p: number): number {
  if (values.length === 0) {
    throw new RangeError("quantile of an empty sample");
  }
  if (!(p >= 0 && p <= 1)) {
    throw new RangeError(`quantile level must be in [0, 1], got ${p}`);
  }
  const sorted = [...values].sort((a, b) => a - b);
  const idx = (sorted.length - 1) * p;
  const lo = Math.floor(idx);
  const hi = Math.ceil(idx);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (idx - lo);
}

export function median(values: number[]): number {
  return quantileType7(values, 0.5);
}

export function mean(values: number[]): number {
  if (values.length === 0) {
    throw new RangeError("mean of an empty sample");
  }
  return values.reduce((acc, v) => acc + v, 0) / values.length;
}

/** Five-number box summary with Tukey 1.5·IQR whiskers. */
export interface BoxStats {
  q1: number;
  median: number;
  q3: number;
  whiskerLo: number;
  whiskerHi: number;
  outliers: number[];
  n: number;
}

export function boxStats(values: number[]): BoxStats {
  const q1 = quantileType7(values, 0.25);
  const med = quantileType7(values, 0.5);
  const q3 = quantileType7(values, 0.75);
  const iqr = q3 - q1;
  const loFence = q1 - 1.5 * iqr;
  const hiFence = q3 + 1.5 * iqr;
  const inside = values.filter((v) => v >= loFence && v <= hiFence);
  return {
    q1,
    median: med,
    q3,
    whiskerLo: Math.min(...inside),
    whiskerHi: Math.max(...inside),
    outliers: values.filter((v) => v < loFence || v > hiFence),
    n: values.length,
  };
}
