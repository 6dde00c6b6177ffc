// 64-bit FNV-1a over UTF-8 bytes; matches the server's map/scenario digests.
// The server always serves maps in canonical form, so digesting the raw text
// verifies integrity without re-canonicalizing client-side.

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = (1n << 64n) - 1n;

export function fnv1a64(bytes: Uint8Array): bigint {
  let h = FNV_OFFSET;
  for (let i = 0; i < bytes.length; i++) {
    h ^= BigInt(bytes[i]);
    h = (h * FNV_PRIME) & MASK64;
  }
  return h;
}

export function digestOfText(text: string): string {
  const bytes = new TextEncoder().encode(text);
  return fnv1a64(bytes).toString(16).padStart(16, "0");
}
