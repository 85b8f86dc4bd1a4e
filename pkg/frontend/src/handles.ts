/**
 * Handle registry for immutable schedule payloads.
 *
 * A handle pins a validated-shape schedule object until released; all
 * evaluation calls against a handle are read-only. The registry exists so
 * callers (and tests) can verify that create/release cycles do not
 * accumulate state.
 */

import type { ScheduleJson } from "./client.js";
import { fptd, npp } from "./client.js";

const registry = new Map<number, ScheduleJson>();
let nextId = 1;

export class ScheduleHandle {
  #id: number;

  constructor(schedule: ScheduleJson) {
    checkShape(schedule);
    this.#id = nextId++;
    registry.set(this.#id, deepFreeze(structuredClone(schedule)));
  }

  get id(): number {
    return this.#id;
  }

  get schedule(): ScheduleJson {
    const s = registry.get(this.#id);
    if (!s) throw new Error("handle has been released");
    return s;
  }

  fptd(t: number, choice: "upper" | "lower"): Promise<number> {
    return fptd(this.schedule, t, choice);
  }

  npp(): Promise<number> {
    return npp(this.schedule);
  }

  release(): void {
    registry.delete(this.#id);
  }
}

function deepFreeze<T>(obj: T): T {
  if (obj && typeof obj === "object") {
    for (const v of Object.values(obj)) deepFreeze(v);
    Object.freeze(obj);
  }
  return obj;
}

function checkShape(s: ScheduleJson): void {
  const d = s.breakpoints.length - 1;
  if (d < 1) throw new Error("schedule needs at least two breakpoints");
  if (s.mu.length !== d || s.sigma.length !== d) {
    throw new Error("mu and sigma must have one value per stage");
  }
  if (s.upper_values.length !== d + 1 || s.lower_values.length !== d + 1) {
    throw new Error("boundary values must align with breakpoints");
  }
}

export function openHandles(): number {
  return registry.size;
}
