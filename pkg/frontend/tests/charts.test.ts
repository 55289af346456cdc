import { describe, expect, it } from "vitest";

import { decimate, renderChart, type Point } from "../src/charts.js";

function wave(n: number): Point[] {
  const out: Point[] = [];
  for (let i = 0; i < n; i++) {
    out.push([i, Math.sin(i / 7) * 10 + (i % 13 === 0 ? 25 : 0)]);
  }
  return out;
}

describe("decimate", () => {
  it("passes small series through untouched", () => {
    const pts = wave(40);
    expect(decimate(pts, 50)).toBe(pts);
  });

  it("bounds the output to two points per bucket", () => {
    const out = decimate(wave(10_000), 100);
    expect(out.length).toBeLessThanOrEqual(200);
    expect(out.length).toBeGreaterThan(100);
  });

  it("preserves the global extremes", () => {
    const pts = wave(5000);
    const vs = pts.map((p) => p[1]);
    const out = decimate(pts, 64);
    const outVs = out.map((p) => p[1]);
    expect(Math.max(...outVs)).toBe(Math.max(...vs));
    expect(Math.min(...outVs)).toBe(Math.min(...vs));
  });

  it("keeps timestamps non-decreasing", () => {
    const out = decimate(wave(3000), 37);
    for (let i = 1; i < out.length; i++) {
      expect(out[i]![0]).toBeGreaterThanOrEqual(out[i - 1]![0]);
    }
  });
});

describe("renderChart", () => {
  const set = (points: Point[]) => ({ key: "telemetry.t_fpga0,system=s00", tags: { system: "s00" }, points });

  it("renders an svg path per series", () => {
    const svg = renderChart({ width: 400, height: 120, sets: [set(wave(500)), set(wave(300))] });
    expect(svg).toContain("<svg");
    expect(svg.match(/<path /g)).toHaveLength(2);
  });

  it("renders an empty placeholder without data", () => {
    const svg = renderChart({ width: 400, height: 120, sets: [set([])] });
    expect(svg).toContain("no data");
    expect(svg).not.toContain("<path");
  });

  it("draws annotation markers inside the time extent only", () => {
    const svg = renderChart({
      width: 400,
      height: 120,
      sets: [set(wave(100))],
      annotations: [
        { id: "n1", t_start: 50, t_end: null, category: "outage", text: "drawer", systems: [] },
        { id: "n2", t_start: 9999, t_end: null, category: "note", text: "late", systems: [] },
      ],
    });
    expect(svg.match(/annotation-mark/g)).toHaveLength(1);
  });

  it("handles a constant series without dividing by zero", () => {
    const flat: Point[] = [[0, 5], [1, 5], [2, 5]];
    const svg = renderChart({ width: 100, height: 50, sets: [set(flat)] });
    expect(svg).toContain("<path");
    expect(svg).not.toContain("NaN");
  });
});
