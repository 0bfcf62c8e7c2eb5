// DOM construction for the pair view, recommendation card, and history panel.
// Pure render functions: given payloads, produce elements; no state in here.

import type { BoxSpec, Candidate, HistoryEntry, PairPayload, StatusPayload } from "./types.js";

type Attrs = Record<string, string | ((e: Event) => void)>;

export function el(tag: string, attrs: Attrs = {}, ...children: Array<string | Node>): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (typeof v === "function") node.addEventListener(k.replace(/^on/, "").toLowerCase(), v as EventListener);
    else if (k === "className") node.className = v;
    else node.setAttribute(k, v);
  }
  for (const c of children) {
    node.appendChild(typeof c === "string" ? document.createTextNode(c) : c);
  }
  return node;
}

function fraction(value: number, lower: number, upper: number): number {
  if (upper <= lower) return 0;
  return Math.min(1, Math.max(0, (value - lower) / (upper - lower)));
}

export function candidateCard(
  label: string,
  candidate: Candidate,
  box: BoxSpec,
  onPrefer: (() => void) | null,
): HTMLElement {
  const rows = candidate.named.map((nv, i) => {
    const lo = box.lower[i];
    const hi = box.upper[i];
    const pct = (fraction(nv.value, lo, hi) * 100).toFixed(1);
    return el(
      "div",
      { className: "param-row" },
      el("span", { className: "param-name" }, nv.unit ? `${nv.name} [${nv.unit}]` : nv.name),
      el(
        "div",
        { className: "param-bar-track" },
        el("div", { className: "param-bar", style: `width:${pct}%` }),
      ),
      el("span", { className: "param-value" }, nv.value.toPrecision(4)),
    );
  });
  const button = el(
    "button",
    {
      className: "prefer-button",
      "data-candidate": label.toLowerCase(),
      ...(onPrefer ? { onclick: () => onPrefer() } : { disabled: "disabled" }),
    },
    `Prefer ${label}`,
  );
  return el(
    "div",
    { className: "candidate-card", "data-card": label.toLowerCase() },
    el("h3", {}, `Candidate ${label}`),
    el("div", { className: "param-list" }, ...rows),
    button,
  );
}

export function renderPair(
  container: HTMLElement,
  pair: PairPayload,
  box: BoxSpec,
  busy: boolean,
  onPrefer: (winner: "a" | "b") => void,
): void {
  container.replaceChildren(
    el(
      "div",
      { className: "pair-view", "data-pair-id": String(pair.pair_id) },
      el(
        "p",
        { className: "pair-meta" },
        `Comparison ${pair.pair_id + 1} - episode ${pair.episode}, hf episode ${pair.hf_episode}`,
      ),
      el(
        "div",
        { className: "pair-cards" },
        candidateCard("A", pair.a, box, busy ? null : () => onPrefer("a")),
        candidateCard("B", pair.b, box, busy ? null : () => onPrefer("b")),
      ),
    ),
  );
}

export function renderWaiting(container: HTMLElement, message: string): void {
  container.replaceChildren(el("p", { className: "waiting" }, message));
}

export function renderRecommendation(container: HTMLElement, status: StatusPayload): void {
  if (!status.recommendation) {
    container.replaceChildren(el("p", {}, "No recommendation yet."));
    return;
  }
  const parts = status.recommendation.named
    .map((nv) => `${nv.name} = ${nv.value.toPrecision(4)}${nv.unit ? ` ${nv.unit}` : ""}`)
    .join(", ");
  const latency =
    status.last_refit_seconds == null ? "" : ` (last refit ${status.last_refit_seconds.toFixed(1)}s)`;
  container.replaceChildren(
    el("p", { className: "recommendation", "data-role": "recommendation" }, parts),
    el(
      "p",
      { className: "progress" },
      `hf episode ${status.hf_episode}/${status.hf_total}, ${status.comparisons} comparisons, ` +
        `${status.lf_observations} numerical observations${latency}`,
    ),
  );
}

export function renderHistory(container: HTMLElement, history: HistoryEntry[], box: BoxSpec): void {
  if (history.length === 0) {
    container.replaceChildren(el("p", {}, "No comparisons yet."));
    return;
  }
  const names = box.names ?? history[0].a.map((_, i) => `x${i}`);
  const rows = history.map((h, idx) => {
    const fmt = (v: number[]) => v.map((x) => x.toPrecision(3)).join(", ");
    const winnerFirst =
      h.winner === "a" ? `[${fmt(h.a)}] beat [${fmt(h.b)}]` : `[${fmt(h.b)}] beat [${fmt(h.a)}]`;
    const rec = h.recommendation ? ` -> recommend [${fmt(h.recommendation)}]` : "";
    return el("li", { className: "history-row", "data-winner": h.winner }, `#${idx + 1} ${winnerFirst}${rec}`);
  });
  container.replaceChildren(
    el("p", { className: "history-names" }, `parameters: ${names.join(", ")}`),
    el("ol", { className: "history-list" }, ...rows),
  );
}

export function renderBanner(container: HTMLElement, message: string | null): void {
  if (!message) {
    container.replaceChildren();
    return;
  }
  container.replaceChildren(el("div", { className: "banner", role: "alert" }, message));
}
