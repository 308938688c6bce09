/** Payload decoding helpers: base64 floats and PNG data URLs. */

export function decodeFloatGrid(b64: string, height: number, width: number): Float32Array {
  const raw = atob(b64);
  if (raw.length !== height * width * 4) {
    throw new Error(`float grid has ${raw.length} bytes, expected ${height * width * 4}`);
  }
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return new Float32Array(bytes.buffer);
}

export function pngDataUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}
