/**
 * Thin client for the fptlik command-line core.
 *
 * Every numerical value returned here is produced by the core process and
 * transported through its documented CSV/JSON formats; this layer only
 * assembles request payloads and parses responses. Doubles survive the trip
 * bit-for-bit: the core prints shortest round-trip representations and
 * JavaScript numbers are IEEE-754 doubles.
 */

import { execFile } from "node:child_process";
import { mkdtemp, rm, writeFile, readFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

const execFileAsync = promisify(execFile);

/** Core executable; override with FPTLIK_BIN (e.g. "python3 -m fptlik.cli"). */
const CORE_BIN = process.env.FPTLIK_BIN ?? "fptlik";

export interface ScheduleJson {
  breakpoints: number[];
  mu: number[];
  sigma: number[];
  upper_values: number[];
  lower_values: number[];
  initial: Record<string, unknown>;
}

export interface AddmParams {
  eta: number;
  kappa: number;
  a: number;
  b: number;
  x0: number;
}

export interface FixationSegment {
  duration: number;
  label: "A" | "B";
}

export interface Trial {
  rt: number | null; // null = non-response
  choice: "upper" | "lower" | "none";
  fixations: FixationSegment[];
  rA: number;
  rB: number;
}

export interface FitOptions {
  free?: string[];
  horizon?: number;
  threads?: number;
  quadOrder?: number;
  finalQuadOrder?: number;
  bootstrap?: number;
}

export interface FitResultJson {
  estimate: AddmParams;
  loglik: number;
  iterations: number;
  n_evals: number;
  converged: boolean;
  free: string[];
  intervals?: Record<string, [number, number]>;
}

export interface LoglikResultJson {
  loglik: number;
  n_trials: number;
  n_zero_density: number;
}

export class CoreError extends Error {
  constructor(message: string, public readonly exitCode: number | null) {
    super(message);
  }
}

async function runCore(args: string[]): Promise<void> {
  const [bin, ...pre] = CORE_BIN.split(" ");
  try {
    await execFileAsync(bin, [...pre, ...args], { maxBuffer: 1 << 26 });
  } catch (err) {
    const e = err as { code?: number | null; stderr?: string; message?: string };
    throw new CoreError(e.stderr?.trim() || e.message || "core invocation failed", e.code ?? null);
  }
}

async function withTempDir<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(join(tmpdir(), "fptlik-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}

function trialsCsv(trials: Trial[]): string {
  const lines = ["trial_id,rt,choice,covariates"];
  trials.forEach((t, i) => {
    const cov = JSON.stringify({
      fixations: t.fixations.map((f) => ({ duration: f.duration, label: f.label })),
      r_a: t.rA,
      r_b: t.rB,
    });
    const rt = t.rt === null ? "" : String(t.rt);
    lines.push(`${i},${rt},${t.choice},"${cov.replace(/"/g, '""')}"`);
  });
  return lines.join("\n") + "\n";
}

/** Passage-schedule payload for one trial's covariates (bookkeeping only:
 * breakpoints, per-dwell drift and the linear boundary heights; all
 * densities are computed by the core). */
export function buildAddmSchedule(
  p: AddmParams,
  fixations: FixationSegment[],
  rA: number,
  rB: number,
  horizon?: number,
): ScheduleJson {
  const collapse = p.b > 0 ? p.a / p.b : Infinity;
  const tEnd = Math.min(horizon ?? collapse, collapse);
  if (!Number.isFinite(tEnd)) {
    throw new Error("a horizon is required when the boundaries never collapse");
  }
  const switches: number[] = [];
  let acc = 0;
  for (const f of fixations) {
    acc += f.duration;
    switches.push(acc);
  }
  const inner = switches.filter((s) => s > 1e-12 && s < tEnd - 1e-12);
  const bp = [0, ...inner, tEnd];
  const mu: number[] = [];
  for (let k = 0; k + 1 < bp.length; k++) {
    const mid = 0.5 * (bp[k] + bp[k + 1]);
    let seg = switches.findIndex((s) => mid <= s);
    if (seg < 0) seg = fixations.length - 1;
    const lab = fixations[seg].label;
    mu.push(lab === "A" ? p.kappa * (rA - p.eta * rB) : p.kappa * (p.eta * rA - rB));
  }
  return {
    breakpoints: bp,
    mu,
    sigma: bp.slice(1).map(() => 1.0),
    upper_values: bp.map((t) => p.a - p.b * t),
    lower_values: bp.map((t) => -p.a + p.b * t),
    initial: { type: "point", x0: p.x0 },
  };
}

/** First passage density of a schedule at time t on the chosen boundary. */
export async function fptd(
  schedule: ScheduleJson,
  t: number,
  choice: "upper" | "lower",
): Promise<number> {
  return withTempDir(async (dir) => {
    const cfg = join(dir, "schedule.json");
    const out = join(dir, "density.csv");
    await writeFile(cfg, JSON.stringify(schedule));
    await runCore(["density", "--config", cfg, "--output", out, "--grid", `${t / 2}:${t}:2`]);
    const rows = (await readFile(out, "utf8")).trim().split("\n");
    const last = rows.filter((r) => !r.startsWith("#") && !r.startsWith("t,")).pop();
    if (!last) throw new CoreError("empty density output", null);
    const [, fu, fl] = last.split(",").map(Number);
    return choice === "upper" ? fu : fl;
  });
}

/** Non-passage probability of a schedule at its horizon. */
export async function npp(schedule: ScheduleJson): Promise<number> {
  return withTempDir(async (dir) => {
    const cfg = join(dir, "schedule.json");
    const out = join(dir, "density.csv");
    await writeFile(cfg, JSON.stringify(schedule));
    const h = schedule.breakpoints[schedule.breakpoints.length - 1];
    await runCore(["density", "--config", cfg, "--output", out, "--grid", `${h / 2}:${h}:2`]);
    const line = (await readFile(out, "utf8")).split("\n").find((r) => r.startsWith("# NPP"));
    if (!line) throw new CoreError("missing NPP line", null);
    return Number(line.split(" ").pop());
  });
}

/** Dataset log likelihood under shared parameters. */
export async function datasetLoglik(
  trials: Trial[],
  params: AddmParams,
  opts: FitOptions = {},
): Promise<LoglikResultJson> {
  return withTempDir(async (dir) => {
    const trialsPath = join(dir, "trials.csv");
    const paramsPath = join(dir, "params.json");
    const out = join(dir, "loglik.json");
    await writeFile(trialsPath, trialsCsv(trials));
    await writeFile(paramsPath, JSON.stringify(params));
    const args = ["loglik", "--trials", trialsPath, "--params", paramsPath, "--output", out];
    if (opts.threads) args.push("--threads", String(opts.threads));
    if (opts.horizon !== undefined) args.push("--horizon", String(opts.horizon));
    if (opts.quadOrder) args.push("--quad-order", String(opts.quadOrder));
    if (opts.finalQuadOrder) args.push("--final-quad-order", String(opts.finalQuadOrder));
    await runCore(args);
    return JSON.parse(await readFile(out, "utf8")) as LoglikResultJson;
  });
}

/** Maximum likelihood fit. */
export async function fit(
  trials: Trial[],
  init: AddmParams,
  opts: FitOptions = {},
): Promise<FitResultJson> {
  return withTempDir(async (dir) => {
    const trialsPath = join(dir, "trials.csv");
    const initPath = join(dir, "init.json");
    const out = join(dir, "fit.json");
    await writeFile(trialsPath, trialsCsv(trials));
    await writeFile(initPath, JSON.stringify(init));
    const args = ["fit", "--trials", trialsPath, "--init", initPath, "--output", out];
    if (opts.free?.length) args.push("--free", opts.free.join(","));
    if (opts.threads) args.push("--threads", String(opts.threads));
    if (opts.horizon !== undefined) args.push("--horizon", String(opts.horizon));
    if (opts.quadOrder) args.push("--quad-order", String(opts.quadOrder));
    if (opts.finalQuadOrder) args.push("--final-quad-order", String(opts.finalQuadOrder));
    if (opts.bootstrap) args.push("--bootstrap", String(opts.bootstrap));
    await runCore(args);
    return JSON.parse(await readFile(out, "utf8")) as FitResultJson;
  });
}

export interface McmcOptions extends FitOptions {
  draws?: number;
  burn?: number;
  scale?: number;
  seed?: number;
}

export interface McmcResultJson {
  free: string[];
  chain: number[][];
  acceptanceRate: number;
}

/** Random-walk posterior sampling; returns the recorded chain. */
export async function mcmcSample(
  trials: Trial[],
  init: AddmParams,
  opts: McmcOptions = {},
): Promise<McmcResultJson> {
  return withTempDir(async (dir) => {
    const trialsPath = join(dir, "trials.csv");
    const initPath = join(dir, "init.json");
    const out = join(dir, "chain.csv");
    await writeFile(trialsPath, trialsCsv(trials));
    await writeFile(initPath, JSON.stringify(init));
    const args = ["mcmc", "--trials", trialsPath, "--init", initPath, "--output", out];
    if (opts.free?.length) args.push("--free", opts.free.join(","));
    if (opts.draws) args.push("--draws", String(opts.draws));
    if (opts.burn !== undefined) args.push("--burn", String(opts.burn));
    if (opts.scale) args.push("--scale", String(opts.scale));
    if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
    if (opts.threads) args.push("--threads", String(opts.threads));
    if (opts.quadOrder) args.push("--quad-order", String(opts.quadOrder));
    if (opts.finalQuadOrder) args.push("--final-quad-order", String(opts.finalQuadOrder));
    await runCore(args);
    const lines = (await readFile(out, "utf8")).trim().split("\n");
    const free = lines[0].split(",");
    const chain = lines.slice(1).map((r) => r.split(",").map(Number));
    const summary = JSON.parse(await readFile(out + ".summary.json", "utf8"));
    return { free, chain, acceptanceRate: summary.acceptance_rate };
  });
}

/** Run a raw core subcommand (escape hatch for the full CLI surface). */
export async function runSubcommand(args: string[]): Promise<void> {
  await runCore(args);
}
