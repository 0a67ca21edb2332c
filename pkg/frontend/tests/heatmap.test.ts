import { describe, expect, it } from "vitest";

import { blendOverlay, decodePixmap, scaleNearest, toRgba } from "../src/heatmap";
import { pixmapOf } from "./fixture";

/** Deterministic byte stream so failures reproduce. */
function bytes(count: number, seed: number): number[] {
  const out: number[] = [];
  let state = seed >>> 0;
  for (let i = 0; i < count; i += 1) {
    state = (state * 1664525 + 1013904223) >>> 0;
    out.push(state % 256);
  }
  return out;
}

describe("decodePixmap", () => {
  it("round-trips raw RGB bytes through base64", () => {
    const raw = bytes(6 * 4 * 3, 11);
    const image = decodePixmap(pixmapOf(6, 4, raw));
    expect(image.width).toBe(6);
    expect(image.height).toBe(4);
    expect(Array.from(image.data)).toEqual(raw);
  });

  it("rejects payloads whose length disagrees with the extent", () => {
    const pixmap = pixmapOf(2, 2, bytes(12, 3));
    pixmap.width = 5;
    expect(() => decodePixmap(pixmap)).toThrow(/expected 30/);
  });
});

describe("scaleNearest", () => {
  it("returns the input untouched when the extent already matches", () => {
    const image = decodePixmap(pixmapOf(3, 3, bytes(27, 5)));
    expect(scaleNearest(image, 3, 3)).toBe(image);
  });

  it("replicates pixels when upscaling by an integer factor", () => {
    // 1x2 image: left pixel red, right pixel blue
    const image = decodePixmap(pixmapOf(2, 1, [255, 0, 0, 0, 0, 255]));
    const scaled = scaleNearest(image, 4, 2);
    expect(scaled.width).toBe(4);
    expect(scaled.height).toBe(2);
    for (const row of [0, 1]) {
      const offset = row * 4 * 3;
      expect(Array.from(scaled.data.slice(offset, offset + 6))).toEqual([255, 0, 0, 255, 0, 0]);
      expect(Array.from(scaled.data.slice(offset + 6, offset + 12))).toEqual([0, 0, 255, 0, 0, 255]);
    }
  });

  it("rejects empty targets", () => {
    const image = decodePixmap(pixmapOf(1, 1, [9, 9, 9]));
    expect(() => scaleNearest(image, 0, 4)).toThrow(/positive/);
  });
});

describe("blendOverlay", () => {
  it("reproduces the base bytes exactly at opacity zero", () => {
    // every byte value appears, so rounding drift anywhere would show
    const raw: number[] = [];
    for (let v = 0; v < 256; v += 1) raw.push(v, 255 - v, (v * 7) % 256);
    const base = decodePixmap(pixmapOf(16, 16, raw));
    const overlay = decodePixmap(pixmapOf(4, 4, bytes(48, 17)));
    const blended = blendOverlay(base, overlay, 0);
    expect(Array.from(blended.data)).toEqual(raw);
  });

  it("reproduces the fitted overlay exactly at opacity one", () => {
    const base = decodePixmap(pixmapOf(4, 4, bytes(48, 1)));
    const overlay = decodePixmap(pixmapOf(2, 2, bytes(12, 2)));
    const blended = blendOverlay(base, overlay, 1);
    const fitted = scaleNearest(overlay, 4, 4);
    expect(Array.from(blended.data)).toEqual(Array.from(fitted.data));
  });

  it("rounds the per-channel lerp at intermediate opacity", () => {
    const base = decodePixmap(pixmapOf(1, 1, [10, 200, 255]));
    const overlay = decodePixmap(pixmapOf(1, 1, [20, 100, 0]));
    const blended = blendOverlay(base, overlay, 0.25);
    expect(Array.from(blended.data)).toEqual([
      Math.round(0.75 * 10 + 0.25 * 20),
      Math.round(0.75 * 200 + 0.25 * 100),
      Math.round(0.75 * 255),
    ]);
  });

  it("scales a coarse overlay up to the photo extent before blending", () => {
    const base = decodePixmap(pixmapOf(4, 4, new Array(48).fill(0)));
    const overlay = decodePixmap(pixmapOf(2, 2, [
      100, 0, 0, 200, 0, 0,
      0, 100, 0, 0, 200, 0,
    ]));
    const blended = blendOverlay(base, overlay, 1);
    // top-left quadrant of the result holds the overlay's top-left pixel
    expect(Array.from(blended.data.slice(0, 3))).toEqual([100, 0, 0]);
    expect(Array.from(blended.data.slice((1 * 4 + 1) * 3, (1 * 4 + 1) * 3 + 3))).toEqual([100, 0, 0]);
    expect(Array.from(blended.data.slice((2 * 4 + 2) * 3, (2 * 4 + 2) * 3 + 3))).toEqual([0, 200, 0]);
  });

  it("rejects opacity outside [0, 1]", () => {
    const image = decodePixmap(pixmapOf(1, 1, [1, 2, 3]));
    expect(() => blendOverlay(image, image, -0.1)).toThrow(/opacity/);
    expect(() => blendOverlay(image, image, 1.01)).toThrow(/opacity/);
    expect(() => blendOverlay(image, image, Number.NaN)).toThrow(/opacity/);
  });
});

describe("toRgba", () => {
  it("expands RGB triplets to opaque RGBA", () => {
    const image = decodePixmap(pixmapOf(2, 1, [1, 2, 3, 4, 5, 6]));
    expect(Array.from(toRgba(image))).toEqual([1, 2, 3, 255, 4, 5, 6, 255]);
  });
});
