// Pure view-model logic: ordering, badges, chart mapping, submit guard.

import type { QueryInfo, SamplePayload } from "./api.js";

export type Badge = "likely-false" | "ambiguous";

export function badgeFor(direction: QueryInfo["direction"]): Badge {
  return direction === "descending" ? "likely-false" : "ambiguous";
}

// Likely-false first (highest p_false leading), then ambiguous in ascending
// p_false order — mirrors how the selector built the round.
export function sortQueue(queries: QueryInfo[]): QueryInfo[] {
  const desc = queries
    .filter((q) => q.direction === "descending")
    .sort((a, b) => b.p_false - a.p_false || a.id - b.id);
  const asc = queries
    .filter((q) => q.direction === "ascending")
    .sort((a, b) => a.p_false - b.p_false || a.id - b.id);
  return [...desc, ...asc];
}

export function formatPFalse(p: number): string {
  return p.toFixed(3);
}

export function currentLabelName(q: QueryInfo): "stable" | "unstable" {
  return q.current_label.p_unstable >= q.current_label.p_stable ? "unstable" : "stable";
}

export interface ChannelSeries {
  channel: number;
  points: number[];
}

// Split the flat row-major sample payload into per-channel series. The chart
// must render exactly the payload: channels * steps points in total.
export function toChannelSeries(sample: SamplePayload): ChannelSeries[] {
  const [, channels, steps] = sample.shape.length === 3
    ? sample.shape
    : [1, sample.shape[0], sample.shape[1]];
  if (channels * steps !== sample.values.length) {
    throw new Error(
      `payload length ${sample.values.length} does not match shape ${sample.shape.join("x")}`,
    );
  }
  const series: ChannelSeries[] = [];
  for (let c = 0; c < channels; c++) {
    series.push({ channel: c, points: sample.values.slice(c * steps, (c + 1) * steps) });
  }
  return series;
}

export function pointCount(series: ChannelSeries[]): number {
  return series.reduce((acc, s) => acc + s.points.length, 0);
}

// Client-side idempotence: one in-flight/settled submission per query id,
// unless the server reports a state that allows retrying (network error).
export class SubmitGuard {
  private taken = new Set<number>();

  tryAcquire(id: number): boolean {
    if (this.taken.has(id)) return false;
    this.taken.add(id);
    return true;
  }

  release(id: number): void {
    this.taken.delete(id);
  }
}

export function sparklinePath(
  values: number[],
  width: number,
  height: number,
  lo = 40,
  hi = 100,
): string {
  if (values.length === 0) return "";
  const span = Math.max(hi - lo, 1e-9);
  const step = values.length > 1 ? width / (values.length - 1) : 0;
  return values
    .map((v, i) => {
      const x = (i * step).toFixed(1);
      const y = (height - ((Math.min(Math.max(v, lo), hi) - lo) / span) * height).toFixed(1);
      return `${i === 0 ? "M" : "L"}${x},${y}`;
    })
    .join(" ");
}

export function describeRound(pending: number, total: number, round: number): string {
  if (total === 0) return "no annotation rounds yet";
  if (pending === 0) return `round ${round}: all ${total} answered`;
  return `round ${round}: ${pending} of ${total} awaiting labels`;
}
