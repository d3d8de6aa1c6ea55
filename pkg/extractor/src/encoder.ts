/*
  Document encoders.

  The default encoder id points at a pretrained long-document clinical
  transformer; loading it requires downloading model weights, so in offline
  environments it reports an encoder load failure. The built-in
  "hashed-768" encoder needs no weights: every token deterministically maps
  to a 768-dimensional state vector derived from its hash, and the document
  embedding is the mean over token states (mean pooling). It is pinned by
  construction: the same text always yields byte-identical output.
*/

export const DEFAULT_ENCODER = "clinical-longformer";
export const HASHED_ENCODER = "hashed-768";

export interface Encoder {
  id: string;
  dim: number;
  /** Embed one document from its token sequence (already truncated). */
  encode(tokens: string[]): Float64Array;
}

/** Unicode-aware lowercase word tokenization. */
export function tokenize(text: string): string[] {
  const matches = text.toLowerCase().match(/[\p{L}\p{N}]+/gu);
  return matches ?? [];
}

/* FNV-1a on UTF-8 bytes, 64-bit via BigInt; stable across platforms. */
function fnv1a64(token: string): bigint {
  const bytes = Buffer.from(token, "utf8");
  let hash = 0xcbf29ce484222325n;
  for (const b of bytes) {
    hash ^= BigInt(b);
    hash = (hash * 0x100000001b3n) & 0xffffffffffffffffn;
  }
  return hash;
}

/* splitmix64: one 64-bit state step + output mix. */
function splitmix64(state: bigint): [bigint, bigint] {
  const mask = 0xffffffffffffffffn;
  state = (state + 0x9e3779b97f4a7c15n) & mask;
  let z = state;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & mask;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & mask;
  z = z ^ (z >> 31n);
  return [state, z];
}

const TWO53 = 2 ** 53;

class HashedEncoder implements Encoder {
  id = HASHED_ENCODER;
  dim: number;
  private cache = new Map<string, Float64Array>();

  constructor(dim = 768) {
    this.dim = dim;
  }

  /** Deterministic per-token state: unit-scaled stream keyed by the token hash. */
  tokenState(token: string): Float64Array {
    const cached = this.cache.get(token);
    if (cached) return cached;
    const vec = new Float64Array(this.dim);
    let state = fnv1a64(token);
    for (let i = 0; i < this.dim; i++) {
      let out: bigint;
      [state, out] = splitmix64(state);
      // uniform in (-1, 1) from the top 53 bits
      vec[i] = (Number(out >> 11n) / TWO53) * 2 - 1;
    }
    this.cache.set(token, vec);
    return vec;
  }

  encode(tokens: string[]): Float64Array {
    const out = new Float64Array(this.dim);
    if (tokens.length === 0) return out; // empty sequence -> zero vector
    for (const token of tokens) {
      const state = this.tokenState(token);
      for (let i = 0; i < this.dim; i++) out[i] += state[i];
    }
    for (let i = 0; i < this.dim; i++) out[i] /= tokens.length;
    return out;
  }
}

export class EncoderLoadError extends Error {}

export function loadEncoder(id: string): Encoder {
  if (id === HASHED_ENCODER) return new HashedEncoder();
  if (id === DEFAULT_ENCODER) {
    throw new EncoderLoadError(
      `encoder load failure: '${id}' requires downloading pretrained weights, ` +
        `which this environment does not provide; use '${HASHED_ENCODER}' for a ` +
        `deterministic offline encoder`
    );
  }
  throw new EncoderLoadError(`encoder load failure: unknown encoder id '${id}'`);
}

export function cosine(a: Float64Array, b: Float64Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) return 0;
  return dot / Math.sqrt(na * nb);
}
