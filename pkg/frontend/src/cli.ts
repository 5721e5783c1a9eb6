import { readFileSync, writeFileSync } from "node:fs";

import {
  Figure, Filters, Kind, KINDS,
  buildElbow, buildEnvBox, buildEtaSweep, buildGammaQuantiles,
} from "./figures.js";
import { EmptyFilterError, SchemaError, parseElbowCsv, parseResultsCsv } from "./schema.js";
import { renderSvg } from "./svg.js";

const USAGE = `usage: plot <kind> --in results.csv --out fig.svg [--dump-json fig.json]
                [--method M] [--gamma G] [--eta E] [--family F]

kinds: ${KINDS.join(", ")}
The elbow kind reads the harness's elbow CSV; the others read results CSVs.
Output is an SVG vector image; --dump-json writes the exact plotted numbers.`;

class UsageError extends Error {}

interface CliArgs {
  kind: Kind;
  input: string;
  output: string | null;
  dumpJson: string | null;
  filters: Filters;
}

export function parseArgs(argv: string[]): CliArgs {
  if (argv.length === 0) {
    throw new UsageError("missing plot kind");
  }
  const [kind, ...rest] = argv;
  if (!KINDS.includes(kind as Kind)) {
    throw new UsageError(`unknown plot kind ${JSON.stringify(kind)}`);
  }
  const opts = new Map<string, string>();
  for (let i = 0; i < rest.length; i += 2) {
    const flag = rest[i];
    if (!flag.startsWith("--")) {
      throw new UsageError(`expected a --flag, got ${JSON.stringify(flag)}`);
    }
    const value = rest[i + 1];
    if (value === undefined) {
      throw new UsageError(`flag ${flag} needs a value`);
    }
    opts.set(flag.slice(2), value);
  }
  const known = ["in", "out", "dump-json", "method", "gamma", "eta", "family"];
  for (const key of opts.keys()) {
    if (!known.includes(key)) {
      throw new UsageError(`unknown flag --${key}`);
    }
  }
  const input = opts.get("in");
  if (input === undefined) {
    throw new UsageError("--in is required");
  }
  const output = opts.get("out") ?? null;
  const dumpJson = opts.get("dump-json") ?? null;
  if (output === null && dumpJson === null) {
    throw new UsageError("nothing to do: pass --out and/or --dump-json");
  }
  const filters: Filters = {};
  if (opts.has("method")) filters.method = opts.get("method");
  for (const key of ["gamma", "eta"] as const) {
    if (opts.has(key)) {
      const v = Number(opts.get(key));
      if (Number.isNaN(v)) {
        throw new UsageError(`--${key} must be numeric, got ${opts.get(key)}`);
      }
      filters[key] = v;
    }
  }
  if (opts.has("family")) filters.family = opts.get("family");
  return { kind: kind as Kind, input, output, dumpJson, filters };
}

export function buildFigure(kind: Kind, csvText: string, filters: Filters): Figure {
  switch (kind) {
    case "env_box":
      return buildEnvBox(parseResultsCsv(csvText), filters);
    case "elbow":
      return buildElbow(parseElbowCsv(csvText));
    case "eta_sweep":
      return buildEtaSweep(parseResultsCsv(csvText), filters);
    case "gamma_quantiles":
      return buildGammaQuantiles(parseResultsCsv(csvText), filters);
  }
}

export function main(argv: string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (e) {
    if (e instanceof UsageError) {
      process.stderr.write(`error: ${e.message}\n\n${USAGE}\n`);
      return 2;
    }
    throw e;
  }
  try {
    const text = readFileSync(args.input, "utf-8");
    const figure = buildFigure(args.kind, text, args.filters);
    if (args.output !== null) {
      writeFileSync(args.output, renderSvg(figure), "utf-8");
    }
    if (args.dumpJson !== null) {
      writeFileSync(args.dumpJson, JSON.stringify(figure, null, 2) + "\n", "utf-8");
    }
    return 0;
  } catch (e) {
    if (e instanceof SchemaError || e instanceof EmptyFilterError) {
      process.stderr.write(`error: ${e.message}\n`);
      return 1;
    }
    if (e instanceof Error && "code" in e && e.code === "ENOENT") {
      process.stderr.write(`error: cannot read ${args.input}\n`);
      return 1;
    }
    throw e;
  }
}

if (process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() as string)) {
  process.exit(main(process.argv.slice(2)));
}
