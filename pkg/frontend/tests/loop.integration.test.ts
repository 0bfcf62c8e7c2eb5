// End-to-end loop against the real session service: create a session with a
// synthetic low-fidelity oracle, answer three comparisons through the DOM,
// and verify pair progression, duplicate rejection, and the final
// recommendation.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { PreferenceApp } from "../src/app";
import type { CreateSessionRequest } from "../src/types";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;

async function waitForServer(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/api/sessions/nonexistent`);
      if (r.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((res) => setTimeout(res, 500));
  }
  throw new Error("session service did not come up");
}

beforeAll(async () => {
  const dataDir = mkdtempSync(join(tmpdir(), "prefmf-ui-"));
  server = spawn(
    "python3",
    ["-m", "prefmf.cli", "serve", "--port", String(PORT), "--data-dir", dataDir],
    { stdio: "ignore" },
  );
  await waitForServer();
});

afterAll(() => {
  server?.kill();
});

const sessionConfig: CreateSessionRequest = {
  box: { lower: [0, 0], upper: [1, 1], names: ["accel weight", "jerk weight"], units: ["", ""] },
  schedule: { lf_explore: 4, lf_exploit: 1, hf: 3 },
  surrogate_kind: "mm-ar1",
  lf_oracle: { kind: "synthetic-pair", seed: 7, target_correlation: 0.9 },
  seed: 2,
  mcmc: { chains: 2, warmup: 100, draws: 100, leapfrog_steps: 16 },
  acq_budget: 128,
  rec_budget: 128,
};

describe("live preference loop", () => {
  it("runs three comparisons to completion with distinct pairs", async () => {
    const root = document.createElement("div");
    document.body.replaceChildren(root);
    const app = new PreferenceApp(root, BASE);

    await app.createSession(sessionConfig);
    app.stopPolling(); // drive the loop explicitly in the test
    expect(app.state.sessionId).not.toBeNull();
    expect(app.state.status!.lf_observations).toBe(4 + 5);

    const seenPairs: string[] = [];
    for (let k = 0; k < 3; k++) {
      const pairView = root.querySelector(".pair-view");
      expect(pairView, `pair ${k} rendered`).not.toBeNull();
      const pair = app.state.pair!;
      seenPairs.push(JSON.stringify([pair.a.values, pair.b.values]));
      // candidates are rendered with both configured parameter names
      const names = [...root.querySelectorAll(".param-name")].map((n) => n.textContent);
      expect(names).toContain("accel weight");
      expect(names).toContain("jerk weight");
      expect(pair.a.values).not.toEqual(pair.b.values);

      const duplicateId = pair.pair_id;
      await app.prefer("a");

      // duplicate submission for the already-answered pair is rejected
      const dup = await fetch(`${BASE}/api/sessions/${app.state.sessionId}/preference`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ schema_version: 1, winner: "a", pair_id: duplicateId }),
      });
      expect([409, 200]).toContain(dup.status);
      expect(dup.status).toBe(409);
    }

    expect(new Set(seenPairs).size).toBe(3);
    expect(app.state.status!.complete).toBe(true);
    expect(app.state.status!.comparisons).toBe(3);
    const rec = root.querySelector('[data-role="recommendation"]');
    expect(rec).not.toBeNull();
    expect(rec!.textContent).toContain("accel weight");

    // the server refuses further queries once the schedule is exhausted
    const after = await fetch(`${BASE}/api/sessions/${app.state.sessionId}/query`);
    expect(after.status).toBe(409);
  });
});
