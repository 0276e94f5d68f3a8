/** Colorize single-channel mask pixels for alpha-blended canvas overlays. */

export type Rgba = [number, number, number, number];

const BINARY_COLOR: Rgba = [255, 64, 64, 200];
const INSTANCE_PALETTE: Rgba[] = [
  [64, 200, 255, 200],
  [255, 200, 64, 200],
  [64, 255, 128, 200],
  [220, 120, 255, 200],
];

/** Map one mask byte to RGBA; zero stays fully transparent. */
export function colorizeValue(value: number, mode: "binary" | "instance"): Rgba {
  if (value === 0) return [0, 0, 0, 0];
  if (mode === "binary") return BINARY_COLOR;
  return INSTANCE_PALETTE[(value - 1) % INSTANCE_PALETTE.length]!;
}

/** Expand grayscale bytes (one per pixel) into an RGBA buffer. */
export function colorizeBuffer(
  gray: Uint8Array | Uint8ClampedArray,
  mode: "binary" | "instance",
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    const [r, g, b, a] = colorizeValue(gray[i]!, mode);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = a;
  }
  return out;
}
