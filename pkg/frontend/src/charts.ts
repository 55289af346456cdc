import type { AnnotationInfo, MetricSet } from "./types.js";

// Raw series arrive from /systems/{id}/metrics; the only client-side
// processing is viewport decimation (min/max per pixel bucket), which
// preserves extremes instead of averaging them away.

export type Point = [number, number];

export function decimate(points: Point[], buckets: number): Point[] {
  if (buckets <= 0 || points.length <= buckets * 2) {
    return points;
  }
  const t0 = points[0]![0];
  const t1 = points[points.length - 1]![0];
  const width = (t1 - t0) / buckets || 1;
  const out: Point[] = [];
  let i = 0;
  for (let b = 0; b < buckets && i < points.length; b++) {
    const edge = b === buckets - 1 ? Infinity : t0 + (b + 1) * width;
    let lo: Point | null = null;
    let hi: Point | null = null;
    while (i < points.length && points[i]![0] < edge) {
      const p = points[i]!;
      if (lo === null || p[1] < lo[1]) lo = p;
      if (hi === null || p[1] > hi[1]) hi = p;
      i++;
    }
    if (lo === null || hi === null) continue;
    if (lo === hi) {
      out.push(lo);
    } else {
      // keep time order within the bucket
      out.push(lo[0] <= hi[0] ? lo : hi, lo[0] <= hi[0] ? hi : lo);
    }
  }
  return out;
}

export interface ChartSpec {
  width: number;
  height: number;
  sets: MetricSet[];
  annotations?: AnnotationInfo[];
  span?: [number, number];
}

interface Extent {
  t0: number;
  t1: number;
  v0: number;
  v1: number;
}

function extent(sets: MetricSet[], span?: [number, number]): Extent | null {
  let t0 = Infinity;
  let t1 = -Infinity;
  let v0 = Infinity;
  let v1 = -Infinity;
  for (const s of sets) {
    for (const [t, v] of s.points) {
      if (span && (t < span[0] || t > span[1])) continue;
      if (t < t0) t0 = t;
      if (t > t1) t1 = t;
      if (v < v0) v0 = v;
      if (v > v1) v1 = v;
    }
  }
  if (!Number.isFinite(t0) || !Number.isFinite(v0)) return null;
  if (t1 === t0) t1 = t0 + 1;
  if (v1 === v0) {
    v0 -= 0.5;
    v1 += 0.5;
  }
  return { t0, t1, v0, v1 };
}

export function pathFor(points: Point[], ex: Extent, width: number, height: number): string {
  const sx = (t: number) => (((t - ex.t0) / (ex.t1 - ex.t0)) * width).toFixed(1);
  const sy = (v: number) => (height - ((v - ex.v0) / (ex.v1 - ex.v0)) * height).toFixed(1);
  return points
    .map(([t, v], i) => `${i === 0 ? "M" : "L"}${sx(t)} ${sy(v)}`)
    .join(" ");
}

const COLORS = ["#4ea1d3", "#d3824e", "#6ec26e", "#b36ec2", "#c2b36e"];

export function renderChart(spec: ChartSpec): string {
  const ex = extent(spec.sets, spec.span);
  if (ex === null) {
    return `<svg class="chart" width="${spec.width}" height="${spec.height}"><text x="8" y="20" class="chart-empty">no data</text></svg>`;
  }
  const buckets = Math.max(16, Math.floor(spec.width / 2));
  const paths = spec.sets
    .map((s, i) => {
      const visible = spec.span
        ? s.points.filter(([t]) => t >= spec.span![0] && t <= spec.span![1])
        : s.points;
      const pts = decimate(visible, buckets);
      if (pts.length === 0) return "";
      return `<path d="${pathFor(pts, ex, spec.width, spec.height)}" fill="none" stroke="${COLORS[i % COLORS.length]}" stroke-width="1.2"><title>${s.key}</title></path>`;
    })
    .join("");
  const marks = (spec.annotations ?? [])
    .filter((a) => a.t_start >= ex.t0 && a.t_start <= ex.t1)
    .map((a) => {
      const x = (((a.t_start - ex.t0) / (ex.t1 - ex.t0)) * spec.width).toFixed(1);
      return `<line x1="${x}" y1="0" x2="${x}" y2="${spec.height}" class="annotation-mark"><title>${a.category}: ${a.text}</title></line>`;
    })
    .join("");
  const labels = `<text x="4" y="12" class="chart-label">${ex.v1.toPrecision(4)}</text><text x="4" y="${spec.height - 4}" class="chart-label">${ex.v0.toPrecision(4)}</text>`;
  return `<svg class="chart" width="${spec.width}" height="${spec.height}" viewBox="0 0 ${spec.width} ${spec.height}">${paths}${marks}${labels}</svg>`;
}
