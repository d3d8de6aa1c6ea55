/*
  Extraction job runner: CSV in, embedding CSV out.

  Output format matches the pipeline's embedding-file contract: one row of
  floats per input row, no header, row order preserved. Texts longer than
  maxTokens are truncated (counted and reported, not fatal).
*/

import fs from "fs";
import Papa from "papaparse";
import { DEFAULT_ENCODER, Encoder, loadEncoder, tokenize } from "./encoder.js";

export interface ExtractJob {
  inputPath: string;
  textColumn: string;
  encoderId?: string;
  maxTokens?: number;
  outputPath: string;
  batchSize?: number;
}

export interface ExtractResult {
  rows: number;
  dim: number;
  truncated: number;
  encoderId: string;
}

export function readTextColumn(inputPath: string, textColumn: string): string[] {
  if (!fs.existsSync(inputPath)) {
    throw new Error(`input file not found: ${inputPath}`);
  }
  const raw = fs.readFileSync(inputPath, "utf8");
  const parsed = Papa.parse<Record<string, string>>(raw, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`cannot parse ${inputPath}: ${e.message} (row ${e.row})`);
  }
  const fields = parsed.meta.fields ?? [];
  if (!fields.includes(textColumn)) {
    throw new Error(`text column '${textColumn}' not found; have: ${fields.join(", ")}`);
  }
  return parsed.data.map((row) => row[textColumn] ?? "");
}

export function embedTexts(
  texts: string[],
  encoder: Encoder,
  maxTokens: number,
  batchSize: number,
  onBatch?: (done: number) => void
): { vectors: Float64Array[]; truncated: number } {
  const vectors: Float64Array[] = [];
  let truncated = 0;
  for (let start = 0; start < texts.length; start += batchSize) {
    const batch = texts.slice(start, start + batchSize);
    for (const text of batch) {
      let tokens = tokenize(text);
      if (tokens.length > maxTokens) {
        tokens = tokens.slice(0, maxTokens);
        truncated += 1;
      }
      vectors.push(encoder.encode(tokens));
    }
    onBatch?.(Math.min(start + batchSize, texts.length));
  }
  return { vectors, truncated };
}

export function writeEmbeddingCsv(outputPath: string, vectors: Float64Array[]): void {
  const lines = vectors.map((vec) => Array.from(vec, (v) => String(v)).join(","));
  fs.writeFileSync(outputPath, lines.join("\n") + "\n", "utf8");
}

export function runJob(job: ExtractJob, log: (msg: string) => void = () => {}): ExtractResult {
  const encoderId = job.encoderId ?? DEFAULT_ENCODER;
  const encoder = loadEncoder(encoderId);
  const maxTokens = job.maxTokens ?? 4096;
  const batchSize = job.batchSize ?? 64;
  const texts = readTextColumn(job.inputPath, job.textColumn);
  const { vectors, truncated } = embedTexts(texts, encoder, maxTokens, batchSize, (done) =>
    log(`embedded ${done}/${texts.length}`)
  );
  writeEmbeddingCsv(job.outputPath, vectors);
  if (truncated > 0) {
    log(`warning: ${truncated} text(s) exceeded ${maxTokens} tokens and were truncated`);
  }
  return { rows: vectors.length, dim: encoder.dim, truncated, encoderId };
}
