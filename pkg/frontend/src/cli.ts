/**
 * Standalone figure renderer for the harness CSV outputs.
 *
 *   twoscale-plots --kind convergence --input convergence.csv \
 *       --metadata converge_metadata.json --output figure.svg
 *
 * Exit codes: 0 success, 1 usage error, 2 data error (unreadable input,
 * malformed CSV, missing column).
 */

import { readFileSync, writeFileSync } from "node:fs";
import { DataError } from "./csv.js";
import { FigureKind, Metadata, renderFigure } from "./figures.js";

const KINDS: FigureKind[] = ["convergence", "ergodic-decay", "delta-sweep"];

export interface CliArgs {
  kind: FigureKind;
  input: string;
  output: string;
  metadata?: string;
}

export function parseArgs(argv: string[]): CliArgs {
  const opts = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new UsageError(`expected --flag value pairs, got '${argv.slice(i).join(" ")}'`);
    }
    opts.set(flag.slice(2), value);
  }
  for (const key of opts.keys()) {
    if (!["kind", "input", "output", "metadata"].includes(key)) {
      throw new UsageError(`unknown flag --${key}`);
    }
  }
  const kind = opts.get("kind");
  const input = opts.get("input");
  const output = opts.get("output");
  if (!kind || !input || !output) {
    throw new UsageError("--kind, --input and --output are required");
  }
  if (!KINDS.includes(kind as FigureKind)) {
    throw new UsageError(`--kind must be one of ${KINDS.join(", ")}, got '${kind}'`);
  }
  return { kind: kind as FigureKind, input, output, metadata: opts.get("metadata") };
}

export class UsageError extends Error {}

export function main(argv: string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`usage error: ${(err as Error).message}\n`);
    return 1;
  }
  try {
    const csvText = readFileSync(args.input, "utf-8");
    let meta: Metadata | null = null;
    if (args.metadata) {
      meta = JSON.parse(readFileSync(args.metadata, "utf-8")) as Metadata;
    }
    const svg = renderFigure(args.kind, csvText, meta);
    writeFileSync(args.output, svg, "utf-8");
    process.stdout.write(`wrote ${args.output}\n`);
    return 0;
  } catch (err) {
    if (err instanceof DataError) {
      process.stderr.write(`data error: ${err.message}\n`);
    } else {
      process.stderr.write(`error: ${(err as Error).message}\n`);
    }
    return 2;
  }
}

// invoked directly (not imported by a test)
if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
