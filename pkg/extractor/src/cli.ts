#!/usr/bin/env node
/*
  CLI: embed a CSV text column into an n x d embedding CSV

  Usage:
    embed-extract extract --input notes.csv --text-col report --encoder hashed-768 --out notes_emb.csv

  Flags:
    --input <csv>       main table with a header row
    --text-col <name>   column holding the document text
    --encoder <id>      encoder id (default: clinical-longformer; use
                        hashed-768 for the deterministic offline encoder)
    --out <csv>         output path (no header, one row per input row)
    --max-tokens <n>    truncation length (default 4096)
    --batch-size <n>    rows per progress tick (default 64)
*/

import { EncoderLoadError } from "./encoder.js";
import { runJob } from "./extract.js";

function parseArgs(argv: string[]) {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--input") args.input = argv[++i];
    else if (a === "--text-col") args.textCol = argv[++i];
    else if (a === "--encoder") args.encoder = argv[++i];
    else if (a === "--out") args.out = argv[++i];
    else if (a === "--max-tokens") args.maxTokens = argv[++i];
    else if (a === "--batch-size") args.batchSize = argv[++i];
    else if (a === "--help" || a === "-h") args.help = "1";
    else if (!args.command) args.command = a;
    else throw new Error(`unknown argument: ${a}`);
  }
  return args;
}

function usage() {
  console.log(
    "usage: embed-extract extract --input <csv> --text-col <name> [--encoder <id>] --out <csv> " +
      "[--max-tokens <n>] [--batch-size <n>]"
  );
}

export function main(argv: string[]): number {
  let args: Record<string, string>;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  if (args.help) {
    usage();
    return 0;
  }
  if (args.command !== "extract") {
    console.error(`unknown command '${args.command ?? ""}'`);
    usage();
    return 2;
  }
  for (const key of ["input", "textCol", "out"] as const) {
    if (!args[key]) {
      console.error(`missing required flag for ${key}`);
      usage();
      return 2;
    }
  }
  try {
    const result = runJob(
      {
        inputPath: args.input,
        textColumn: args.textCol,
        encoderId: args.encoder,
        maxTokens: args.maxTokens ? parseInt(args.maxTokens, 10) : undefined,
        batchSize: args.batchSize ? parseInt(args.batchSize, 10) : undefined,
        outputPath: args.out,
      },
      (msg) => console.error(msg)
    );
    console.log(
      `wrote ${result.rows}x${result.dim} embeddings to ${args.out} (encoder ${result.encoderId}, ` +
        `${result.truncated} truncated)`
    );
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return err instanceof EncoderLoadError ? 4 : 3;
  }
}

import { fileURLToPath } from "url";

if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}
