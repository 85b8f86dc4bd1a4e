/**
 * Parity: values surfaced by the client must equal the core CLI's output
 * bit-for-bit (same code path; doubles survive the text round trip).
 */

import { execFile } from "node:child_process";
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  buildAddmSchedule,
  datasetLoglik,
  fit,
  fptd,
  mcmcSample,
  npp,
  type AddmParams,
  type Trial,
} from "../src/index.js";

const execFileAsync = promisify(execFile);
const BIN = process.env.FPTLIK_BIN ?? "fptlik";

const PARAMS: AddmParams = { eta: 0.7, kappa: 0.5, a: 2.1, b: 0.3, x0: -0.2 };

function syntheticTrials(n: number): Trial[] {
  // deterministic covariate/observation fabric (durations & ratings cycle)
  const trials: Trial[] = [];
  for (let i = 0; i < n; i++) {
    const rA = (i % 5) + 1;
    const rB = ((i * 3 + 1) % 5) + 1;
    const d1 = 0.2 + 0.013 * (i % 9);
    const d2 = 0.3 + 0.011 * (i % 7);
    const rt = 0.25 + 0.002 * i + 0.03 * (i % 11);
    trials.push({
      rt,
      choice: i % 3 === 0 ? "lower" : "upper",
      fixations: [
        { duration: d1, label: i % 2 ? "A" : "B" },
        { duration: d2, label: i % 2 ? "B" : "A" },
        { duration: 8.0, label: i % 2 ? "A" : "B" },
      ],
      rA,
      rB,
    });
  }
  return trials;
}

let dir: string;

beforeAll(async () => {
  dir = await mkdtemp(join(tmpdir(), "fptlik-parity-"));
});

afterAll(async () => {
  await rm(dir, { recursive: true, force: true });
});

describe("core parity", () => {
  it("datasetLoglik equals a direct loglik subcommand run bit-for-bit", async () => {
    const trials = syntheticTrials(200);
    const viaClient = await datasetLoglik(trials, PARAMS);

    // independent direct invocation of the CLI on the same payloads
    const trialsPath = join(dir, "trials.csv");
    const paramsPath = join(dir, "params.json");
    const out = join(dir, "ll.json");
    const lines = ["trial_id,rt,choice,covariates"];
    trials.forEach((t, i) => {
      const cov = JSON.stringify({
        fixations: t.fixations.map((f) => ({ duration: f.duration, label: f.label })),
        r_a: t.rA,
        r_b: t.rB,
      });
      lines.push(`${i},${t.rt},${t.choice},"${cov.replace(/"/g, '""')}"`);
    });
    await writeFile(trialsPath, lines.join("\n") + "\n");
    await writeFile(paramsPath, JSON.stringify(PARAMS));
    const [bin, ...pre] = BIN.split(" ");
    await execFileAsync(bin, [
      ...pre, "loglik", "--trials", trialsPath, "--params", paramsPath, "--output", out,
    ]);
    const direct = JSON.parse(await readFile(out, "utf8"));

    expect(viaClient.loglik).toBe(direct.loglik); // bit-for-bit
    expect(viaClient.n_trials).toBe(200);
    expect(viaClient.n_zero_density).toBe(0);
  }, 120_000);

  it("fptd on a single-stage schedule equals the density export at the same t", async () => {
    const schedule = buildAddmSchedule(PARAMS, [{ duration: 10, label: "A" }], 5, 3);
    const t = 0.9;
    const viaClient = await fptd(schedule, t, "upper");

    const cfg = join(dir, "sched.json");
    const out = join(dir, "dens.csv");
    await writeFile(cfg, JSON.stringify(schedule));
    const [bin, ...pre] = BIN.split(" ");
    await execFileAsync(bin, [
      ...pre, "density", "--config", cfg, "--output", out, "--grid", `${t / 2}:${t}:2`,
    ]);
    const rows = (await readFile(out, "utf8")).trim().split("\n");
    const last = rows.filter((r) => !r.startsWith("#") && !r.startsWith("t,")).pop()!;
    const direct = Number(last.split(",")[1]);

    expect(viaClient).toBe(direct);
    expect(viaClient).toBeGreaterThan(0);
  }, 60_000);

  it("npp surfaces the core's non-passage probability", async () => {
    const schedule = buildAddmSchedule(PARAMS, [{ duration: 10, label: "A" }], 5, 3, 1.0);
    const q = await npp(schedule);
    expect(q).toBeGreaterThan(0);
    expect(q).toBeLessThanOrEqual(1);
  }, 60_000);

  it("fit and mcmc surface core results", async () => {
    const trials = syntheticTrials(120);
    const fitRes = await fit(trials, PARAMS, { free: ["kappa"], quadOrder: 8, finalQuadOrder: 10 });
    expect(fitRes.converged).toBe(true);
    expect(fitRes.estimate.kappa).toBeGreaterThan(0);

    const mc = await mcmcSample(trials, PARAMS, {
      free: ["kappa"], draws: 10, burn: 2, scale: 0.05, seed: 1,
      quadOrder: 8, finalQuadOrder: 10,
    });
    expect(mc.chain.length).toBe(10);
    expect(mc.free).toEqual(["kappa"]);
    expect(mc.acceptanceRate).toBeGreaterThanOrEqual(0);
  }, 300_000);

  it("concurrent evaluations run independently", async () => {
    const schedule = buildAddmSchedule(PARAMS, [{ duration: 10, label: "A" }], 5, 3);
    const ts = [0.4, 0.6, 0.8, 1.0, 1.2, 1.4];
    const serialStart = Date.now();
    const serial: number[] = [];
    for (const t of ts) serial.push(await fptd(schedule, t, "upper"));
    const serialMs = Date.now() - serialStart;

    const parStart = Date.now();
    const parallel = await Promise.all(ts.map((t) => fptd(schedule, t, "upper")));
    const parMs = Date.now() - parStart;

    expect(parallel).toEqual(serial);
    // concurrency must provide real aggregate throughput gains
    expect(parMs).toBeLessThan(serialMs);
  }, 120_000);
});
