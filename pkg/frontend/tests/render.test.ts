import { beforeEach, describe, expect, it } from "vitest";

import { renderHistory, renderPair, renderRecommendation } from "../src/render";
import type { BoxSpec, PairPayload, StatusPayload } from "../src/types";

const box: BoxSpec = {
  lower: [0, 0],
  upper: [1, 2],
  names: ["kp", "kd"],
  units: ["1/s", "s"],
};

function pairPayload(): PairPayload {
  return {
    schema_version: 1,
    session_id: "abc",
    pair_id: 4,
    episode: 7,
    hf_episode: 2,
    phase: "hf",
    a: {
      values: [0.25, 1.0],
      named: [
        { name: "kp", unit: "1/s", value: 0.25 },
        { name: "kd", unit: "s", value: 1.0 },
      ],
    },
    b: {
      values: [0.75, 0.5],
      named: [
        { name: "kp", unit: "1/s", value: 0.75 },
        { name: "kd", unit: "s", value: 0.5 },
      ],
    },
    preview: null,
  };
}

describe("renderPair", () => {
  let container: HTMLElement;
  beforeEach(() => {
    container = document.createElement("div");
  });

  it("renders two candidates with every configured parameter name", () => {
    renderPair(container, pairPayload(), box, false, () => {});
    const cards = container.querySelectorAll(".candidate-card");
    expect(cards).toHaveLength(2);
    const names = [...container.querySelectorAll(".param-name")].map((n) => n.textContent);
    expect(names).toEqual(["kp [1/s]", "kd [s]", "kp [1/s]", "kd [s]"]);
  });

  it("scales bars by the box bounds", () => {
    renderPair(container, pairPayload(), box, false, () => {});
    const bars = [...container.querySelectorAll<HTMLElement>(".param-bar")];
    expect(parseFloat(bars[0].style.width)).toBeCloseTo(25.0); // kp = 0.25 on [0, 1]
    expect(parseFloat(bars[1].style.width)).toBeCloseTo(50.0); // kd = 1.0 on [0, 2]
  });

  it("invokes the callback with the clicked side", () => {
    const clicks: string[] = [];
    renderPair(container, pairPayload(), box, false, (w) => clicks.push(w));
    container.querySelector<HTMLButtonElement>('[data-candidate="b"]')!.click();
    expect(clicks).toEqual(["b"]);
  });

  it("disables both buttons while a refit is in flight", () => {
    renderPair(container, pairPayload(), box, true, () => {
      throw new Error("must not fire");
    });
    const buttons = [...container.querySelectorAll<HTMLButtonElement>(".prefer-button")];
    expect(buttons.every((b) => b.disabled)).toBe(true);
    buttons[0].click();
  });
});

describe("renderRecommendation", () => {
  it("shows the named recommendation and progress counters", () => {
    const container = document.createElement("div");
    const status = {
      schema_version: 1,
      session_id: "abc",
      surrogate_kind: "mm-ar1",
      box,
      schedule: { lf_explore: 4, lf_exploit: 1, hf: 3 },
      episode: 6,
      hf_episode: 1,
      hf_total: 3,
      comparisons: 1,
      lf_observations: 9,
      complete: false,
      outstanding_pair: false,
      recommendation: {
        values: [0.5, 1.5],
        named: [
          { name: "kp", unit: "1/s", value: 0.5 },
          { name: "kd", unit: "s", value: 1.5 },
        ],
      },
      last_refit_seconds: 2.5,
      history: [],
    } satisfies StatusPayload;
    renderRecommendation(container, status);
    expect(container.querySelector('[data-role="recommendation"]')!.textContent).toContain("kp = 0.5000");
    expect(container.querySelector(".progress")!.textContent).toContain("hf episode 1/3");
  });
});

describe("renderHistory", () => {
  it("lists comparisons with the winner first", () => {
    const container = document.createElement("div");
    renderHistory(
      container,
      [
        {
          pair_id: 0,
          a: [0.1, 0.2],
          b: [0.9, 0.8],
          winner: "b",
          recommendation: [0.8, 0.7],
          refit_seconds: 1.0,
        },
      ],
      box,
    );
    const row = container.querySelector(".history-row")!;
    expect(row.getAttribute("data-winner")).toBe("b");
    expect(row.textContent).toContain("[0.900, 0.800] beat [0.100, 0.200]");
  });
});
