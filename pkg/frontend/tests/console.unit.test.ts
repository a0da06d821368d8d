// Console behavior against a scripted fetch: form gating, the
// display-only sign convention, idempotent double-submission, error
// surfacing, staleness, and stopped-stratum presentation.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { TrialConsole } from "../src/console.js";
import type { PosteriorView, TrialSummary } from "../src/types.js";

function axisGrid(): number[][] {
  const axis = [0, 0.25, 0.5, 0.75, 1];
  const grid: number[][] = [];
  for (const a of axis) for (const b of axis) grid.push([a, b]);
  return grid;
}

const GRID = axisGrid();

function freshTrial(): TrialSummary {
  return {
    schema_version: "1",
    trial_id: "t1",
    config: { mode: "personalized", n_max: 10, consecutive_required: 3 },
    status: "enrolling",
    n: 0,
    iteration: 0,
    unique_doses: 0,
    pending: [
      { dose: [0, 0.25], stratum: "0", needed: 1, received: 0 },
      { dose: [0.5, 0.75], stratum: "1", needed: 1, received: 0 },
    ],
    strata: {
      "0": { n: 0, stopped: false, counter: 0, d_hat: null, f_star: null, max_aei: null },
      "1": { n: 0, stopped: false, counter: 0, d_hat: null, f_star: null, max_aei: null },
    },
  };
}

function fittedTrial(): TrialSummary {
  const t = freshTrial();
  t.n = 6;
  t.iteration = 2;
  t.pending = [
    { dose: [0.25, 0.75], stratum: "0", needed: 1, received: 0 },
    { dose: [0.75, 0.25], stratum: "1", needed: 1, received: 0 },
  ];
  t.strata = {
    "0": { n: 3, stopped: false, counter: 1, d_hat: [0.25, 0.75], f_star: -1.1, max_aei: 0.04 },
    "1": { n: 3, stopped: false, counter: 0, d_hat: [0.75, 0.25], f_star: -0.7, max_aei: 0.09 },
  };
  return t;
}

function posterior(stratum: string): PosteriorView {
  return {
    schema_version: "1",
    trial_id: "t1",
    stratum,
    grid: GRID,
    mean: GRID.map((_, i) => 0.01 * i - 1),
    sigma2: GRID.map(() => 0.05),
    aei: GRID.map((_, i) => 0.001 * i),
    f_star: -1.1,
    d_hat: [0.25, 0.75],
    dopt_mass: GRID.map((_, i) => (i === 8 ? 0.8 : i === 9 ? 0.2 : 0)),
    stopped: false,
    counter: 1,
    n_stratum: 3,
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

interface Route {
  posteriorStatus?: number;
  trial?: TrialSummary;
  onSubmit?: (body: { cohort_id: string; items: unknown[] }) => Response;
}

function scriptFetch(route: Route) {
  const calls: { url: string; body?: string }[] = [];
  const mock = vi.fn(async (url: string | URL, init?: RequestInit) => {
    const u = String(url);
    calls.push({ url: u, body: init?.body as string | undefined });
    if (u.includes("/outcomes")) {
      const body = JSON.parse(init!.body as string);
      if (route.onSubmit) return route.onSubmit(body);
      return json(200, {
        schema_version: "1", trial_id: "t1", duplicate: false,
        accepted: body.items.length, cohort_complete: true,
        status: "enrolling", n: 8, pending: [], records: [],
      });
    }
    if (u.includes("/posterior")) {
      if (route.posteriorStatus === 409) {
        return json(409, { detail: "no fitted model yet; submit the initial cohort first" });
      }
      const stratum = new URL(u, "http://x").searchParams.get("stratum")!;
      return json(200, posterior(stratum));
    }
    if (u.includes("/recommendation")) return json(409, { detail: "trial is enrolling" });
    return json(200, route.trial ?? freshTrial());
  });
  vi.stubGlobal("fetch", mock);
  return calls;
}

let root: HTMLElement;

beforeEach(() => {
  root = document.createElement("div");
  document.body.appendChild(root);
});

afterEach(() => {
  root.remove();
  vi.unstubAllGlobals();
});

function makeConsole(): TrialConsole {
  return new TrialConsole(root, new ApiClient(""), { pollMs: 0 });
}

function fillAll(value = "1.5"): void {
  for (const input of root.querySelectorAll<HTMLInputElement>("input[data-slot]")) {
    input.value = value;
    input.dispatchEvent(new Event("input", { bubbles: true }));
  }
}

describe("fresh trial", () => {
  it("shows the initial doses as outcome-entry forms and no heatmaps", async () => {
    scriptFetch({ posteriorStatus: 409 });
    const view = makeConsole();
    await view.load("t1");
    expect(root.querySelectorAll("input[data-slot]").length).toBe(2);
    expect(root.querySelectorAll(".cell").length).toBe(0);
    expect(root.textContent).toContain("no fitted model yet");
  });

  it("keeps submit disabled until every outcome is numeric", async () => {
    scriptFetch({ posteriorStatus: 409 });
    const view = makeConsole();
    await view.load("t1");
    const button = root.querySelector<HTMLButtonElement>("[data-role=submit]")!;
    expect(button.disabled).toBe(true);
    const first = root.querySelector<HTMLInputElement>("input[data-slot]")!;
    first.value = "2.5";
    first.dispatchEvent(new Event("input", { bubbles: true }));
    expect(button.disabled).toBe(true);
    fillAll();
    expect(button.disabled).toBe(false);
    first.value = "not a number";
    first.dispatchEvent(new Event("input", { bubbles: true }));
    expect(button.disabled).toBe(true);
  });
});

describe("sign convention", () => {
  it("flips displayed means only while the payload stays objective-scale", async () => {
    const calls = scriptFetch({ trial: fittedTrial() });
    const view = makeConsole();
    await view.load("t1");

    const mean = posterior("0").mean;
    let cells = root.querySelectorAll('[data-role=heatmap][data-stratum="0"] .cell');
    expect(cells.length).toBe(25);
    const shown = Array.from(cells).map((c) => Number(c.getAttribute("data-value")));
    for (const v of mean) expect(shown).toContain(-v);

    // switch to the objective scale: verbatim values
    const toggle = root.querySelector<HTMLInputElement>("[data-role=sign-toggle]")!;
    toggle.checked = false;
    toggle.dispatchEvent(new Event("change", { bubbles: true }));
    cells = root.querySelectorAll('[data-role=heatmap][data-stratum="0"] .cell');
    const raw = Array.from(cells).map((c) => Number(c.getAttribute("data-value")));
    for (const v of mean) expect(raw).toContain(v);

    // outcome payloads are untouched by the display convention
    fillAll("-0.75");
    root.querySelector<HTMLButtonElement>("[data-role=submit]")!.click();
    await view.settled();
    const post = calls.find((c) => c.url.includes("/outcomes"))!;
    const items = JSON.parse(post.body!).items;
    expect(items.map((i: { y: number }) => i.y)).toEqual([-0.75, -0.75]);
  });

  it("never flips variance or acquisition heatmaps", async () => {
    scriptFetch({ trial: fittedTrial() });
    const view = makeConsole();
    await view.load("t1");
    const tab = Array.from(root.querySelectorAll<HTMLButtonElement>("[data-role=tab]"))
      .find((b) => b.dataset.metric === "aei")!;
    tab.click();
    const cells = root.querySelectorAll('[data-role=heatmap][data-stratum="0"] .cell');
    const shown = Array.from(cells).map((c) => Number(c.getAttribute("data-value")));
    for (const v of posterior("0").aei) expect(shown).toContain(v);
  });
});

describe("submission", () => {
  it("sends one cohort for a double-click, under one idempotency key", async () => {
    const calls = scriptFetch({ trial: fittedTrial() });
    const view = makeConsole();
    await view.load("t1");
    fillAll();
    const button = root.querySelector<HTMLButtonElement>("[data-role=submit]")!;
    button.click();
    button.click();
    await view.settled();
    const posts = calls.filter((c) => c.url.includes("/outcomes"));
    expect(posts.length).toBe(1);
    expect(JSON.parse(posts[0]!.body!).cohort_id).toBe("t1-t2-n6");
  });

  it("surfaces a conflict verbatim and keeps the entered values", async () => {
    scriptFetch({
      trial: fittedTrial(),
      onSubmit: () => json(409, { detail: "no open slot matches dose (0.25, 0.75)" }),
    });
    const view = makeConsole();
    await view.load("t1");
    fillAll("3.25");
    root.querySelector<HTMLButtonElement>("[data-role=submit]")!.click();
    await view.settled();
    const banner = root.querySelector<HTMLElement>("[data-role=error]")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toBe("no open slot matches dose (0.25, 0.75)");
    const inputs = root.querySelectorAll<HTMLInputElement>("input[data-slot]");
    for (const input of inputs) expect(input.value).toBe("3.25");
  });
});

describe("staleness", () => {
  it("raises the stale banner when the server has newer events", async () => {
    const trial = fittedTrial();
    scriptFetch({ trial });
    const view = makeConsole();
    await view.load("t1");
    expect(root.querySelector<HTMLElement>("[data-role=stale]")!.hidden).toBe(true);
    const advanced = fittedTrial();
    advanced.n = 8;
    scriptFetch({ trial: advanced });
    await (view as unknown as { checkStale(): Promise<void> }).checkStale();
    expect(root.querySelector<HTMLElement>("[data-role=stale]")!.hidden).toBe(false);
  });
});

describe("stopped strata", () => {
  it("greys the panel and shows the stop badge", async () => {
    const trial = fittedTrial();
    trial.strata["1"]!.stopped = true;
    trial.strata["1"]!.n = 4;
    trial.pending = trial.pending.filter((s) => s.stratum !== "1");
    scriptFetch({ trial });
    const view = makeConsole();
    await view.load("t1");
    const panel = root.querySelector<HTMLElement>('[data-role=stratum-panel][data-stratum="1"]')!;
    expect(panel.classList.contains("stopped")).toBe(true);
    expect(panel.querySelector(".stopped-badge")!.textContent).toBe("stopped at n=4");
  });
});
