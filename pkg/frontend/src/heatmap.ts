/** Client-side pixel work: decode raw-RGB payloads and blend the overlay.
 *
 * Kept as pure byte math over plain buffers so the compositing rules are
 * testable without a canvas implementation; the view layer only converts
 * the result to ImageData at the last moment.
 */

import type { Pixmap } from "./types";

export interface RgbImage {
  width: number;
  height: number;
  /** Tightly packed RGB triplets, row major. */
  data: Uint8ClampedArray;
}

export function decodePixmap(pixmap: Pixmap): RgbImage {
  const binary = atob(pixmap.rgb_base64);
  const expected = pixmap.width * pixmap.height * 3;
  if (binary.length !== expected) {
    throw new Error(
      `pixmap payload is ${binary.length} bytes, expected ${expected} ` +
        `for ${pixmap.width}x${pixmap.height}`,
    );
  }
  const data = new Uint8ClampedArray(expected);
  for (let i = 0; i < expected; i += 1) data[i] = binary.charCodeAt(i);
  return { width: pixmap.width, height: pixmap.height, data };
}

/** Nearest-neighbor resample; the overlay is coarse, smoothness adds nothing. */
export function scaleNearest(image: RgbImage, width: number, height: number): RgbImage {
  if (width < 1 || height < 1) throw new Error("target extent must be positive");
  if (width === image.width && height === image.height) return image;
  const data = new Uint8ClampedArray(width * height * 3);
  for (let y = 0; y < height; y += 1) {
    const sy = Math.min(image.height - 1, Math.floor((y * image.height) / height));
    for (let x = 0; x < width; x += 1) {
      const sx = Math.min(image.width - 1, Math.floor((x * image.width) / width));
      const from = (sy * image.width + sx) * 3;
      const to = (y * width + x) * 3;
      data[to] = image.data[from];
      data[to + 1] = image.data[from + 1];
      data[to + 2] = image.data[from + 2];
    }
  }
  return { width, height, data };
}

/** Per-pixel lerp toward the overlay; opacity 0 returns the base bytes exactly. */
export function blendOverlay(base: RgbImage, overlay: RgbImage, opacity: number): RgbImage {
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error(`opacity must lie in [0, 1], got ${opacity}`);
  }
  const fitted = scaleNearest(overlay, base.width, base.height);
  const data = new Uint8ClampedArray(base.data.length);
  for (let i = 0; i < data.length; i += 1) {
    data[i] = Math.round((1 - opacity) * base.data[i] + opacity * fitted.data[i]);
  }
  return { width: base.width, height: base.height, data };
}

/** RGB triplets to opaque RGBA bytes, ready for an ImageData buffer. */
export function toRgba(image: RgbImage): Uint8ClampedArray {
  const rgba = new Uint8ClampedArray(image.width * image.height * 4);
  for (let p = 0; p < image.width * image.height; p += 1) {
    rgba[p * 4] = image.data[p * 3];
    rgba[p * 4 + 1] = image.data[p * 3 + 1];
    rgba[p * 4 + 2] = image.data[p * 3 + 2];
    rgba[p * 4 + 3] = 255;
  }
  return rgba;
}
