import { describe, expect, it } from "vitest";

import { ScheduleHandle, buildAddmSchedule, openHandles } from "../src/index.js";

const PARAMS = { eta: 0.7, kappa: 0.5, a: 2.1, b: 0.3, x0: -0.2 };

describe("schedule handles", () => {
  it("pins an immutable payload until released", () => {
    const schedule = buildAddmSchedule(PARAMS, [{ duration: 10, label: "A" as const }], 5, 3);
    const h = new ScheduleHandle(schedule);
    expect(h.schedule.breakpoints[0]).toBe(0);
    expect(() => {
      (h.schedule as { mu: number[] }).mu[0] = 99;
    }).toThrow();
    h.release();
    expect(() => h.schedule).toThrow(/released/);
  });

  it("rejects malformed payloads", () => {
    const bad = buildAddmSchedule(PARAMS, [{ duration: 10, label: "A" as const }], 5, 3);
    expect(() => new ScheduleHandle({ ...bad, mu: [] })).toThrow(/per stage/);
  });

  it("creating and releasing 1e5 handles leaks neither registry entries nor memory", () => {
    const schedule = buildAddmSchedule(
      PARAMS,
      [
        { duration: 0.31, label: "A" as const },
        { duration: 0.27, label: "B" as const },
        { duration: 9.0, label: "A" as const },
      ],
      4,
      2,
    );
    const before = openHandles();
    if (globalThis.gc) globalThis.gc();
    const heapBefore = process.memoryUsage().heapUsed;
    for (let i = 0; i < 100_000; i++) {
      const h = new ScheduleHandle(schedule);
      h.release();
    }
    if (globalThis.gc) globalThis.gc();
    const heapAfter = process.memoryUsage().heapUsed;
    expect(openHandles()).toBe(before);
    // allow allocator slack, but catch unbounded growth (~100k retained
    // schedules would be tens of MB)
    expect(heapAfter - heapBefore).toBeLessThan(32 * 1024 * 1024);
  }, 120_000);
});
