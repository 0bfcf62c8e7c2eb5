// State-machine behavior of the app against a scripted in-memory server.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PreferenceApp } from "../src/app";
import type { PairPayload, StatusPayload } from "../src/types";

const box = { lower: [0, 0], upper: [1, 1], names: ["x0", "x1"], units: ["", ""] };

function statusPayload(over: Partial<StatusPayload> = {}): StatusPayload {
  return {
    schema_version: 1,
    session_id: "s1",
    surrogate_kind: "mm-ar1",
    box,
    schedule: { lf_explore: 0, lf_exploit: 0, hf: 3 },
    episode: 0,
    hf_episode: 0,
    hf_total: 3,
    comparisons: 0,
    lf_observations: 4,
    complete: false,
    outstanding_pair: true,
    recommendation: null,
    last_refit_seconds: null,
    history: [],
    ...over,
  };
}

function pairPayload(pairId: number): PairPayload {
  const mk = (v: number) => ({
    values: [v, 1 - v],
    named: [
      { name: "x0", unit: "", value: v },
      { name: "x1", unit: "", value: 1 - v },
    ],
  });
  return {
    schema_version: 1,
    session_id: "s1",
    pair_id: pairId,
    episode: pairId,
    hf_episode: pairId,
    phase: "hf",
    a: mk(0.1 + 0.2 * pairId),
    b: mk(0.9 - 0.2 * pairId),
    preview: null,
  };
}

class ScriptedServer {
  pairId = 0;
  comparisons = 0;
  posts: Array<{ winner: string; pair_id: number }> = [];
  outstanding = true;

  fetch = vi.fn(async (url: string, options?: RequestInit) => {
    const body = options?.body ? JSON.parse(options.body as string) : null;
    if (url.endsWith("/query")) {
      if (this.comparisons >= 3) return json({ detail: "session complete" }, 409);
      this.outstanding = true;
      return json(pairPayload(this.pairId));
    }
    if (url.endsWith("/preference")) {
      if (!this.outstanding || body.pair_id !== this.pairId) {
        return json({ detail: "no outstanding pair or stale pair" }, 409);
      }
      this.posts.push(body);
      this.outstanding = false;
      this.pairId += 1;
      this.comparisons += 1;
      return json(
        statusPayload({
          comparisons: this.comparisons,
          hf_episode: this.comparisons,
          complete: this.comparisons >= 3,
          outstanding_pair: false,
          recommendation: pairPayload(0).a,
        }),
      );
    }
    return json(statusPayload({ comparisons: this.comparisons, complete: this.comparisons >= 3 }));
  });
}

function json(payload: unknown, status = 200) {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("PreferenceApp", () => {
  let server: ScriptedServer;
  let app: PreferenceApp;
  let root: HTMLElement;

  beforeEach(() => {
    server = new ScriptedServer();
    vi.stubGlobal("fetch", server.fetch);
    root = document.createElement("div");
    document.body.replaceChildren(root);
    app = new PreferenceApp(root, "http://test");
  });

  afterEach(() => {
    app.stopPolling();
    vi.unstubAllGlobals();
  });

  it("attaches, renders the pair, and advances on preference", async () => {
    await app.attach("s1");
    expect(root.querySelector(".pair-view")!.getAttribute("data-pair-id")).toBe("0");
    await app.prefer("a");
    expect(server.posts).toEqual([{ schema_version: 1, winner: "a", pair_id: 0 }]);
    expect(root.querySelector(".pair-view")!.getAttribute("data-pair-id")).toBe("1");
  });

  it("button click posts the preference for that side", async () => {
    await app.attach("s1");
    root.querySelector<HTMLButtonElement>('[data-candidate="b"]')!.click();
    await vi.waitFor(() => expect(server.posts.length).toBe(1));
    expect(server.posts[0].winner).toBe("b");
  });

  it("rejects a duplicate submission for the same pair client-side", async () => {
    await app.attach("s1");
    const first = app.prefer("a");
    await app.prefer("b"); // second click while the first is in flight
    await first;
    expect(server.posts.length).toBe(1);
    // and resubmitting an already-answered pair id is refused locally
    app.state.pair = pairPayload(0);
    await app.prefer("b");
    expect(server.posts.length).toBe(1);
    expect(app.state.error).toContain("already answered");
  });

  it("shows the final recommendation and disables querying when complete", async () => {
    await app.attach("s1");
    for (const _ of [0, 1, 2]) {
      await app.prefer("a");
    }
    expect(server.posts.length).toBe(3);
    expect(app.state.status!.complete).toBe(true);
    expect(root.querySelector(".waiting")!.textContent).toContain("complete");
    expect(root.querySelector('[data-role="recommendation"]')).not.toBeNull();
  });

  it("keeps state and offers retry on network failure", async () => {
    await app.attach("s1");
    server.fetch.mockRejectedValueOnce(new TypeError("network down"));
    await app.prefer("a");
    expect(app.state.error).toContain("network failure");
    // the pair is still rendered and can be answered again
    expect(root.querySelector(".pair-view")).not.toBeNull();
    await app.prefer("a");
    expect(server.posts.length).toBe(1);
  });
});
