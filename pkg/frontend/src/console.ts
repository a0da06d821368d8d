// Investigator console for one live trial. All numbers shown come
// straight from API payloads (sign flip aside); the GP lives server
// side and the only state-advancing call the console ever makes is the
// cohort submission.

import { ApiClient, ApiError } from "./api.js";
import { displayValue, formatDose, formatNumber, metricLabel } from "./format.js";
import { renderHeatmap } from "./heatmap.js";
import type {
  OutcomeItem,
  PosteriorView,
  RecommendationResponse,
  TrialSummary,
} from "./types.js";

export interface ConsoleOptions {
  // trial poll interval for the stale-data indicator; 0 disables polling
  pollMs?: number;
}

type Metric = "mean" | "sigma2" | "aei";
const METRICS: Metric[] = ["mean", "sigma2", "aei"];

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

export class TrialConsole {
  trialId = "";
  private trial: TrialSummary | null = null;
  private posteriors = new Map<string, PosteriorView | null>();
  private recommendation: RecommendationResponse | null = null;
  private efficacy = true; // investigators read efficacy; toggle shows the objective scale
  private metric: Metric = "mean";
  private error: string | null = null;
  private stale = false;
  private busy = false;
  private cohortId = "";
  private enteredFor = "";
  private entered = new Map<string, string>();
  private timer: ReturnType<typeof setInterval> | null = null;
  private inflight: Promise<void> = Promise.resolve();

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private opts: ConsoleOptions = {},
  ) {}

  // resolves when any in-flight load or submission has finished
  settled(): Promise<void> {
    return this.inflight;
  }

  async load(trialId: string): Promise<void> {
    this.trialId = trialId;
    const work = (async () => {
      try {
        await this.fetchAll();
        this.render();
        this.startPolling();
      } catch (err) {
        this.error = errorText(err);
        this.render();
      }
    })();
    this.inflight = work;
    await work;
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  private startPolling(): void {
    this.stop();
    const ms = this.opts.pollMs ?? 4000;
    if (ms > 0) this.timer = setInterval(() => void this.checkStale(), ms);
  }

  private async fetchAll(): Promise<void> {
    const trial = await this.api.getTrial(this.trialId);
    const posteriors = new Map<string, PosteriorView | null>();
    for (const key of Object.keys(trial.strata)) {
      try {
        posteriors.set(key, await this.api.getPosterior(this.trialId, key));
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          posteriors.set(key, null); // no fitted model yet
        } else {
          throw err;
        }
      }
    }
    this.recommendation =
      trial.status === "enrolling" ? null : await this.api.getRecommendation(this.trialId);
    this.trial = trial;
    this.posteriors = posteriors;
    this.error = null;
    this.stale = false;
    // idempotency key: the same enrollment state always produces the
    // same id, so a retry or double-click can never double-enter
    this.cohortId = `${this.trialId}-t${trial.iteration}-n${trial.n}`;
  }

  private fingerprint(t: TrialSummary): string {
    return JSON.stringify([t.status, t.n, t.iteration, t.pending.map((s) => s.received)]);
  }

  private async checkStale(): Promise<void> {
    if (!this.trial || this.busy) return;
    try {
      const latest = await this.api.getTrial(this.trialId);
      if (this.fingerprint(latest) !== this.fingerprint(this.trial)) {
        this.stale = true;
        this.syncBanners();
      }
    } catch (err) {
      // no silent retry loop: surface the failure and stop polling
      this.error = errorText(err);
      this.stop();
      this.syncBanners();
    }
  }

  async refresh(): Promise<void> {
    const work = (async () => {
      try {
        await this.fetchAll();
        this.render();
      } catch (err) {
        this.error = errorText(err);
        this.syncBanners();
      }
    })();
    this.inflight = work;
    await work;
  }

  // --- submission -----------------------------------------------------

  private collectItems(): OutcomeItem[] | null {
    const trial = this.trial;
    if (!trial) return null;
    const items: OutcomeItem[] = [];
    for (const input of this.inputs()) {
      const text = input.value.trim();
      const y = Number(text);
      if (text === "" || !Number.isFinite(y)) return null;
      const slot = trial.pending[Number(input.dataset.slot)];
      if (!slot) return null;
      items.push({ dose: slot.dose, stratum: slot.stratum, y });
    }
    return items.length > 0 ? items : null;
  }

  private inputs(): HTMLInputElement[] {
    return Array.from(this.root.querySelectorAll<HTMLInputElement>("input[data-slot]"));
  }

  private async submit(): Promise<void> {
    if (this.busy) return;
    const items = this.collectItems();
    if (!items) return;
    this.busy = true;
    this.syncSubmit();
    const work = (async () => {
      try {
        await this.api.submitOutcomes(this.trialId, this.cohortId, items);
        await this.fetchAll();
        this.busy = false;
        this.render();
      } catch (err) {
        // keep the entered values on screen; show the server's words
        this.busy = false;
        this.error = errorText(err);
        this.syncBanners();
        this.syncSubmit();
      }
    })();
    this.inflight = work;
    await work;
  }

  // --- rendering --------------------------------------------------------

  private render(): void {
    const trial = this.trial;
    this.stashEntries();
    if (!trial) {
      this.root.innerHTML = `<div class="banner error" data-role="error"${
        this.error ? "" : " hidden"}>${esc(this.error ?? "")}</div>`;
      return;
    }
    const parts: string[] = [];
    parts.push(`<div class="banner error" data-role="error" hidden></div>`);
    parts.push(
      `<div class="banner stale" data-role="stale" hidden>` +
        `Newer events exist on the server. ` +
        `<button data-role="refresh">Refresh</button></div>`,
    );
    parts.push(this.summaryHtml(trial));
    if (trial.status === "enrolling" && trial.pending.length > 0) {
      parts.push(this.cohortFormHtml(trial));
    }
    parts.push(this.strataHtml(trial));
    if (this.recommendation) parts.push(this.recommendationHtml(this.recommendation));
    this.root.innerHTML = parts.join("\n");

    // heatmaps carry live DOM state, so they attach after the innerHTML pass
    for (const [key, view] of this.posteriors) {
      const host = this.root.querySelector(`[data-role="heatmap"][data-stratum="${key}"]`);
      if (!host || !view) continue;
      const values = view[this.metric].map((v) => displayValue(this.metric, v, this.efficacy));
      const nextSlot = trial.pending.find((s) => s.stratum === key);
      host.appendChild(
        renderHeatmap(view.grid, values, {
          highlight: nextSlot ? nextSlot.dose : null,
          marker: view.d_hat,
        }),
      );
    }

    this.restoreEntries();
    this.wire();
    this.syncBanners();
    this.syncSubmit();
  }

  private summaryHtml(trial: TrialSummary): string {
    const cfg = trial.config as { n_max?: number; mode?: string };
    return `<section class="card" data-role="summary">
      <h2>${esc(trial.trial_id)}</h2>
      <p>
        <span class="pill status-${esc(trial.status)}">${esc(trial.status)}</span>
        mode ${esc(String(cfg.mode ?? "?"))} ·
        n <b data-role="n">${trial.n}</b> / ${cfg.n_max ?? "?"} ·
        iteration <b>${trial.iteration}</b> ·
        distinct doses made <b>${trial.unique_doses}</b>
      </p>
      <label class="toggle">
        <input type="checkbox" data-role="sign-toggle" ${this.efficacy ? "checked" : ""}>
        show latent values as efficacy (-f)
      </label>
    </section>`;
  }

  private cohortFormHtml(trial: TrialSummary): string {
    const blocks = trial.pending.map((slot, idx) => {
      const open = slot.needed - slot.received;
      const fields = Array.from({ length: open }, (_, k) =>
        `<input type="number" step="any" data-slot="${idx}" data-k="${k}"
           placeholder="outcome ${slot.received + k + 1} of ${slot.needed}">`,
      ).join("\n");
      return `<div class="slot" data-stratum="${esc(slot.stratum)}">
        <div class="slot-head">stratum ${esc(slot.stratum)} · dose
          <b data-role="slot-dose" data-dose='${JSON.stringify(slot.dose)}'>${formatDose(slot.dose)}</b>
          · ${slot.received}/${slot.needed} received</div>
        ${fields}
      </div>`;
    });
    return `<section class="card" data-role="cohort-form">
      <h3>Enter cohort outcomes</h3>
      ${blocks.join("\n")}
      <div class="form-row">
        <button data-role="submit" disabled>Submit cohort</button>
        <span class="hint" data-role="form-hint">fill every outcome to enable submission</span>
      </div>
    </section>`;
  }

  private strataHtml(trial: TrialSummary): string {
    const consecutive = Number((trial.config as { consecutive_required?: number })
      .consecutive_required ?? 0) || null;
    const panels = Object.entries(trial.strata).map(([key, st]) => {
      const view = this.posteriors.get(key) ?? null;
      const nextSlot = trial.pending.find((s) => s.stratum === key);
      const stoppedBadge = st.stopped
        ? `<span class="badge stopped-badge">stopped at n=${st.n}</span>`
        : "";
      const nextLine = nextSlot
        ? `<p>next dose <b data-role="next-dose" data-stratum="${esc(key)}"
             data-dose='${JSON.stringify(nextSlot.dose)}'>${formatDose(nextSlot.dose)}</b>
             (${nextSlot.needed - nextSlot.received} outcomes open)</p>`
        : trial.status === "enrolling" && !st.stopped
          ? `<p>awaiting allocation</p>`
          : "";
      const counterLine = view || st.d_hat
        ? `<p>stopping counter <b data-role="counter" data-stratum="${esc(key)}">${st.counter}</b>${
            consecutive ? ` of ${consecutive} consecutive quiet looks` : ""}</p>`
        : "";
      const tabs = METRICS.map((m) =>
        `<button data-role="tab" data-metric="${m}" class="${m === this.metric ? "active" : ""}">
           ${esc(metricLabel(m, this.efficacy))}</button>`).join("");
      const body = view
        ? `${this.posteriorLinesHtml(view)}
           <div class="tabs">${tabs}</div>
           <div data-role="heatmap" data-stratum="${esc(key)}"></div>
           ${this.massHtml(view.grid, view.dopt_mass, `mass-${key}`)}`
        : `<p class="hint">no fitted model yet; the posterior appears once the first cohort completes</p>`;
      return `<section class="card stratum-panel ${st.stopped ? "stopped" : ""}"
        data-role="stratum-panel" data-stratum="${esc(key)}">
        <h3>stratum ${esc(key)} ${stoppedBadge}</h3>
        <p>n = <span data-role="n-stratum">${st.n}</span></p>
        ${nextLine}
        ${counterLine}
        ${body}
      </section>`;
    });
    return panels.join("\n");
  }

  private posteriorLinesHtml(view: PosteriorView): string {
    const fstar = displayValue("f_star", view.f_star, this.efficacy);
    const label = this.efficacy ? "best observed-fit efficacy f*" : "incumbent objective f*";
    return `<p>current best dose <b data-role="dhat" data-dose='${JSON.stringify(view.d_hat)}'>
        ${formatDose(view.d_hat)}</b> · ${label}
        <b data-role="fstar" data-value="${fstar}">${formatNumber(fstar)}</b>
        · max AEI <b>${view.stopped ? "-" : formatNumber(Math.max(...view.aei))}</b></p>`;
  }

  private massHtml(grid: number[][], mass: number[], role: string): string {
    const rows = mass
      .map((m, i) => ({ m, dose: grid[i]! }))
      .filter((r) => r.m > 0)
      .sort((a, b) => b.m - a.m)
      .slice(0, 6)
      .map(
        (r) => `<div class="mass-row">
          <span class="mass-dose">${formatDose(r.dose)}</span>
          <span class="mass-bar" style="width:${Math.round(r.m * 100)}%"></span>
          <span class="mass-pct" data-mass="${r.m}">${(r.m * 100).toFixed(1)}%</span>
        </div>`,
      );
    return `<details class="mass" data-role="${esc(role)}">
      <summary>where the optimum plausibly sits</summary>${rows.join("")}</details>`;
  }

  private recommendationHtml(rec: RecommendationResponse): string {
    const rows = Object.entries(rec.strata).map(([key, r]) => {
      const mean = displayValue("mean", r.mean, this.efficacy);
      const draws = displayValue("f_draws_mean", r.f_draws_mean, this.efficacy);
      return `<div class="rec-row" data-stratum="${esc(key)}">
        <h4>stratum ${esc(key)}</h4>
        <p>recommended dose <b data-role="rec-dhat" data-stratum="${esc(key)}"
           data-dose='${JSON.stringify(r.d_hat)}'>${formatDose(r.d_hat)}</b></p>
        <p>posterior value there: mean <b data-role="rec-mean" data-value="${mean}">${formatNumber(mean)}</b>
           (draw average ${formatNumber(draws)}, variance ${formatNumber(r.sigma2)})</p>
        ${this.massHtml(r.grid, r.dopt_mass, `rec-mass-${key}`)}
      </div>`;
    });
    return `<section class="card recommendation" data-role="recommendation">
      <h3>Final recommendation</h3>${rows.join("\n")}</section>`;
  }

  // --- wiring and partial updates ---------------------------------------

  private wire(): void {
    this.root.querySelector<HTMLButtonElement>("[data-role=submit]")
      ?.addEventListener("click", () => void this.submit());
    this.root.querySelector<HTMLButtonElement>("[data-role=refresh]")
      ?.addEventListener("click", () => void this.refresh());
    this.root.querySelector<HTMLInputElement>("[data-role=sign-toggle]")
      ?.addEventListener("change", (ev) => {
        this.efficacy = (ev.target as HTMLInputElement).checked;
        this.render();
      });
    for (const tab of this.root.querySelectorAll<HTMLButtonElement>("[data-role=tab]")) {
      tab.addEventListener("click", () => {
        this.metric = tab.dataset.metric as Metric;
        this.render();
      });
    }
    for (const input of this.inputs()) {
      input.addEventListener("input", () => this.syncSubmit());
    }
  }

  private stashEntries(): void {
    const inputs = this.inputs();
    if (inputs.length === 0) return;
    this.enteredFor = this.cohortId;
    this.entered = new Map(
      inputs.map((el) => [`${el.dataset.slot}:${el.dataset.k}`, el.value]),
    );
  }

  private restoreEntries(): void {
    if (this.enteredFor !== this.cohortId) return;
    for (const input of this.inputs()) {
      const kept = this.entered.get(`${input.dataset.slot}:${input.dataset.k}`);
      if (kept !== undefined) input.value = kept;
    }
  }

  private syncBanners(): void {
    const err = this.root.querySelector<HTMLElement>("[data-role=error]");
    if (err) {
      err.hidden = this.error === null;
      err.textContent = this.error ?? "";
    }
    const stale = this.root.querySelector<HTMLElement>("[data-role=stale]");
    if (stale) stale.hidden = !this.stale;
  }

  private syncSubmit(): void {
    const button = this.root.querySelector<HTMLButtonElement>("[data-role=submit]");
    if (!button) return;
    const complete = this.inputs().every((el) => {
      const text = el.value.trim();
      return text !== "" && Number.isFinite(Number(text));
    });
    button.disabled = this.busy || !complete;
    const hint = this.root.querySelector<HTMLElement>("[data-role=form-hint]");
    if (hint) {
      hint.textContent = this.busy
        ? "submitting..."
        : complete ? "" : "fill every outcome to enable submission";
    }
  }
}

function errorText(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return `request failed: ${err.message}`;
  return String(err);
}
