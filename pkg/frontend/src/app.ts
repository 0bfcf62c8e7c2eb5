// The interactive loop: create or attach a session, show the current pair,
// post preferences, and keep the recommendation panel fresh by polling.
// All state lives on the server; this module only mirrors it.

import { ApiError, SessionApi } from "./api.js";
import { el, renderBanner, renderHistory, renderPair, renderRecommendation, renderWaiting } from "./render.js";
import type { CreateSessionRequest, PairPayload, StatusPayload } from "./types.js";

const POLL_INTERVAL_MS = 1000;

export const DEMO_CONFIG: CreateSessionRequest = {
  box: {
    lower: [0, 0],
    upper: [1, 1],
    names: ["accel weight", "jerk weight"],
    units: ["", ""],
  },
  schedule: { lf_explore: 4, lf_exploit: 1, hf: 8 },
  surrogate_kind: "mm-ar1",
  lf_oracle: { kind: "synthetic-pair", seed: 7, target_correlation: 0.9 },
  seed: 1,
  mcmc: { chains: 2, warmup: 150, draws: 150, leapfrog_steps: 16 },
  acq_budget: 192,
  rec_budget: 192,
};

interface AppState {
  sessionId: string | null;
  status: StatusPayload | null;
  pair: PairPayload | null;
  busy: boolean;
  submittedPairIds: Set<number>;
  error: string | null;
}

export class PreferenceApp {
  readonly api: SessionApi;
  readonly state: AppState = {
    sessionId: null,
    status: null,
    pair: null,
    busy: false,
    submittedPairIds: new Set(),
    error: null,
  };
  private panels!: {
    setup: HTMLElement;
    banner: HTMLElement;
    pair: HTMLElement;
    recommendation: HTMLElement;
    history: HTMLElement;
  };
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    baseUrl = "",
  ) {
    this.api = new SessionApi(baseUrl);
    this.buildSkeleton();
  }

  private buildSkeleton(): void {
    const setup = el("section", { className: "setup-panel" });
    const banner = el("div", { className: "banner-slot" });
    const pair = el("section", { className: "pair-slot" });
    const recommendation = el("section", { className: "recommendation-slot" });
    const history = el("section", { className: "history-slot" });
    this.root.replaceChildren(
      el("h1", {}, "Preference tuning"),
      setup,
      banner,
      el("h2", {}, "Current comparison"),
      pair,
      el("h2", {}, "Recommendation"),
      recommendation,
      el("h2", {}, "History"),
      history,
    );
    this.panels = { setup, banner, pair, recommendation, history };
    this.renderSetup();
    renderWaiting(pair, "No session yet.");
  }

  private renderSetup(): void {
    const textarea = el("textarea", { className: "config-input", rows: "10" }) as HTMLTextAreaElement;
    textarea.value = JSON.stringify(DEMO_CONFIG, null, 2);
    const createBtn = el(
      "button",
      { className: "create-button", onclick: () => void this.createFromTextarea(textarea) },
      "Create session",
    );
    const attachInput = el("input", { className: "attach-input", placeholder: "existing session id" }) as HTMLInputElement;
    const attachBtn = el(
      "button",
      { className: "attach-button", onclick: () => void this.attach(attachInput.value.trim()) },
      "Attach",
    );
    this.panels.setup.replaceChildren(
      el("details", {}, el("summary", {}, "Session setup"), textarea, createBtn),
      el("div", { className: "attach-row" }, attachInput, attachBtn),
    );
  }

  private setError(message: string | null): void {
    this.state.error = message;
    renderBanner(this.panels.banner, message);
  }

  async createFromTextarea(textarea: HTMLTextAreaElement): Promise<void> {
    let config: CreateSessionRequest;
    try {
      config = JSON.parse(textarea.value);
    } catch (exc) {
      this.setError(`config is not valid JSON: ${exc}`);
      return;
    }
    await this.createSession(config);
  }

  async createSession(config: CreateSessionRequest): Promise<void> {
    this.setError(null);
    renderWaiting(this.panels.pair, "Creating session (low-fidelity phase runs server-side)...");
    try {
      const status = await this.api.createSession(config);
      this.state.sessionId = status.session_id;
      this.applyStatus(status);
      await this.ensurePair();
      this.startPolling();
    } catch (exc) {
      this.setError(`session creation failed: ${exc}`);
      renderWaiting(this.panels.pair, "No session.");
    }
  }

  async attach(sessionId: string): Promise<void> {
    if (!sessionId) return;
    this.setError(null);
    try {
      const status = await this.api.status(sessionId);
      this.state.sessionId = sessionId;
      this.applyStatus(status);
      await this.ensurePair();
      this.startPolling();
    } catch (exc) {
      this.setError(`could not attach: ${exc}`);
    }
  }

  private applyStatus(status: StatusPayload): void {
    this.state.status = status;
    renderRecommendation(this.panels.recommendation, status);
    renderHistory(this.panels.history, status.history, status.box);
    if (status.complete) {
      this.state.pair = null;
      renderWaiting(this.panels.pair, "Session complete - final recommendation above.");
      this.stopPolling();
    }
  }

  async ensurePair(): Promise<void> {
    const { sessionId, status } = this.state;
    if (!sessionId || !status || status.complete) return;
    try {
      const pair = await this.api.nextQuery(sessionId);
      this.state.pair = pair;
      this.renderCurrentPair();
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 409) {
        // schedule exhausted between status and query
        const fresh = await this.api.status(sessionId);
        this.applyStatus(fresh);
        return;
      }
      this.setError(`could not fetch the next pair: ${exc} - retry below`);
      this.renderRetry();
    }
  }

  private renderCurrentPair(): void {
    const { pair, status } = this.state;
    if (!pair || !status) return;
    renderPair(this.panels.pair, pair, status.box, this.state.busy, (winner) => void this.prefer(winner));
  }

  private renderRetry(): void {
    this.panels.pair.replaceChildren(
      el("button", { className: "retry-button", onclick: () => void this.ensurePair() }, "Retry"),
    );
  }

  async prefer(winner: "a" | "b"): Promise<void> {
    const { sessionId, pair, busy } = this.state;
    if (!sessionId || !pair || busy) return;
    if (this.state.submittedPairIds.has(pair.pair_id)) {
      this.setError("this pair was already answered");
      return;
    }
    this.state.busy = true;
    this.renderCurrentPair(); // disables the buttons while the refit runs
    try {
      this.state.submittedPairIds.add(pair.pair_id);
      const status = await this.api.postPreference(sessionId, winner, pair.pair_id);
      this.state.pair = null;
      this.setError(null);
      this.applyStatus(status);
      this.state.busy = false;
      if (!status.complete) {
        renderWaiting(this.panels.pair, "Fetching the next comparison...");
        await this.ensurePair();
      }
    } catch (exc) {
      this.state.busy = false;
      if (exc instanceof ApiError && exc.status === 409) {
        this.setError(`submission rejected: ${exc.detail}`);
        await this.refreshStatus();
        await this.ensurePair();
      } else {
        // network failure: the server owns the state, so just offer a retry
        this.state.submittedPairIds.delete(pair.pair_id);
        this.setError(`network failure: ${exc} - state preserved on the server`);
        this.renderCurrentPair();
      }
    }
  }

  async refreshStatus(): Promise<void> {
    const { sessionId } = this.state;
    if (!sessionId) return;
    try {
      const status = await this.api.status(sessionId);
      this.applyStatus(status);
    } catch {
      // transient poll failure; the next tick retries
    }
  }

  startPolling(): void {
    this.stopPolling();
    this.pollTimer = setInterval(() => void this.refreshStatus(), POLL_INTERVAL_MS);
  }

  stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }
}

export function createApp(root: HTMLElement, baseUrl = ""): PreferenceApp {
  return new PreferenceApp(root, baseUrl);
}
