import { describe, expect, it } from "vitest";

import type { QueryInfo, SamplePayload } from "../src/api.js";
import {
  badgeFor, currentLabelName, describeRound, formatPFalse, pointCount,
  sortQueue, sparklinePath, SubmitGuard, toChannelSeries,
} from "../src/model.js";

function q(id: number, pFalse: number, direction: QueryInfo["direction"]): QueryInfo {
  return {
    id, sample_id: id, p_false: pFalse, direction, round: 1, status: "pending",
    current_label: { p_stable: 1, p_unstable: 0 },
  };
}

describe("badges", () => {
  it("maps directions to expert-facing badges", () => {
    expect(badgeFor("descending")).toBe("likely-false");
    expect(badgeFor("ascending")).toBe("ambiguous");
  });
});

describe("sortQueue", () => {
  it("lists likely-false first, then ambiguous by ascending p_false", () => {
    const round = [
      q(3, 0.81, "ascending"),
      q(0, 0.99, "descending"),
      q(2, 0.85, "ascending"),
      q(1, 0.95, "descending"),
    ];
    expect(sortQueue(round).map((x) => x.id)).toEqual([0, 1, 3, 2]);
  });

  it("mirrors the selector small case: 2 likely-false + 2 ambiguous", () => {
    const round = [
      q(0, 0.99, "descending"), q(1, 0.95, "descending"),
      q(4, 0.81, "ascending"), q(3, 0.85, "ascending"),
    ];
    const badges = sortQueue(round).map((x) => badgeFor(x.direction));
    expect(badges).toEqual(["likely-false", "likely-false", "ambiguous", "ambiguous"]);
  });

  it("breaks p_false ties by id for a stable ordering", () => {
    const round = [q(7, 0.9, "descending"), q(2, 0.9, "descending")];
    expect(sortQueue(round).map((x) => x.id)).toEqual([2, 7]);
  });
});

describe("formatting", () => {
  it("prints p_false to exactly 3 decimals", () => {
    expect(formatPFalse(0.81)).toBe("0.810");
    expect(formatPFalse(0.99949)).toBe("0.999");
  });

  it("names the current training label by its heavier side", () => {
    const item = q(0, 0.9, "descending");
    expect(currentLabelName(item)).toBe("stable");
    item.current_label = { p_stable: 0.25, p_unstable: 0.75 };
    expect(currentLabelName(item)).toBe("unstable");
  });

  it("describes round progress", () => {
    expect(describeRound(0, 0, 0)).toBe("no annotation rounds yet");
    expect(describeRound(2, 4, 3)).toBe("round 3: 2 of 4 awaiting labels");
    expect(describeRound(0, 4, 3)).toBe("round 3: all 4 answered");
  });
});

describe("toChannelSeries", () => {
  const sample: SamplePayload = {
    id: 5,
    shape: [1, 3, 4],
    values: Array.from({ length: 12 }, (_, i) => i),
  };

  it("splits the flat payload into per-channel rows", () => {
    const series = toChannelSeries(sample);
    expect(series).toHaveLength(3);
    expect(series[0].points).toEqual([0, 1, 2, 3]);
    expect(series[2].points).toEqual([8, 9, 10, 11]);
  });

  it("keeps exactly the payload's point count", () => {
    expect(pointCount(toChannelSeries(sample))).toBe(sample.values.length);
  });

  it("rejects length/shape mismatches", () => {
    expect(() => toChannelSeries({ id: 0, shape: [1, 3, 4], values: [1, 2] }))
      .toThrow(/does not match/);
  });
});

describe("SubmitGuard", () => {
  it("allows exactly one submission per query id", () => {
    const guard = new SubmitGuard();
    expect(guard.tryAcquire(4)).toBe(true);
    expect(guard.tryAcquire(4)).toBe(false);
    expect(guard.tryAcquire(5)).toBe(true);
  });

  it("release re-arms the id after a network failure", () => {
    const guard = new SubmitGuard();
    guard.tryAcquire(4);
    guard.release(4);
    expect(guard.tryAcquire(4)).toBe(true);
  });
});

describe("sparklinePath", () => {
  it("emits one segment per accuracy point", () => {
    const path = sparklinePath([50, 75, 100], 160, 36);
    expect(path.startsWith("M")).toBe(true);
    expect(path.split(" ")).toHaveLength(3);
  });

  it("returns an empty path with no data", () => {
    expect(sparklinePath([], 160, 36)).toBe("");
  });
});
