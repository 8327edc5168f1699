// Canonical message encoding: recursively sorted keys, compact separators.
// Must stay byte-compatible with the bridge encoder; pinned by the golden
// transcript test.

export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => JSON.stringify(k) + ":" + stableStringify(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function decodeMessage(data: string): Record<string, unknown> {
  return JSON.parse(data) as Record<string, unknown>;
}
