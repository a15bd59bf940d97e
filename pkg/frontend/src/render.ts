// Pixel-level rendering: grayscale images, diverging heatmaps (red positive,
// blue negative, black near zero), and alpha compositing for overlay mode.
// Everything works on plain typed arrays so it is testable without a canvas.

export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, row-major
}

/**
 * Diverging color for an attribution score. The scale is anchored at 0 and
 * symmetric: s and -s map to equal-intensity red and blue; 0 maps to black.
 */
export function divergingColor(value: number, limit: number): [number, number, number] {
  if (limit <= 0) return [0, 0, 0];
  const t = Math.min(Math.abs(value) / limit, 1);
  const channel = Math.round(255 * t);
  return value >= 0 ? [channel, 0, 0] : [0, 0, channel];
}

export function heatmapToRgba(scores: Float32Array, width: number, height: number): RgbaImage {
  let limit = 0;
  for (const v of scores) limit = Math.max(limit, Math.abs(v));
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < scores.length; i++) {
    const [r, g, b] = divergingColor(scores[i], limit);
    data[4 * i] = r;
    data[4 * i + 1] = g;
    data[4 * i + 2] = b;
    data[4 * i + 3] = 255;
  }
  return { width, height, data };
}

/** Grayscale render normalized to the image's own [min, max]. */
export function imageToRgba(pixels: Float32Array, width: number, height: number): RgbaImage {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of pixels) {
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  const span = hi > lo ? hi - lo : 1;
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < pixels.length; i++) {
    const g = Math.round(255 * ((pixels[i] - lo) / span));
    data[4 * i] = g;
    data[4 * i + 1] = g;
    data[4 * i + 2] = g;
    data[4 * i + 3] = 255;
  }
  return { width, height, data };
}

/**
 * Overlay compositing: alpha 0 shows the bare image, alpha 1 the bare
 * heatmap, linear blend in between. Alpha channel stays opaque.
 */
export function compositeOverlay(image: RgbaImage, heatmap: RgbaImage, alpha: number): RgbaImage {
  if (image.width !== heatmap.width || image.height !== heatmap.height) {
    throw new Error("overlay requires matching dimensions");
  }
  const a = Math.min(1, Math.max(0, alpha));
  const data = new Uint8ClampedArray(image.data.length);
  for (let i = 0; i < data.length; i += 4) {
    data[i] = Math.round((1 - a) * image.data[i] + a * heatmap.data[i]);
    data[i + 1] = Math.round((1 - a) * image.data[i + 1] + a * heatmap.data[i + 1]);
    data[i + 2] = Math.round((1 - a) * image.data[i + 2] + a * heatmap.data[i + 2]);
    data[i + 3] = 255;
  }
  return { width: image.width, height: image.height, data };
}
