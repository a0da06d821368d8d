// Page bootstrap: pick the API origin, open or create a trial, and
// hand the root element to the console. The trial id rides in the URL
// so a bookmark reopens the same trial.

import { ApiClient, ApiError } from "./api.js";
import { TrialConsole } from "./console.js";

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get("api") ?? "");
const consoleRoot = document.getElementById("console") as HTMLElement;
const view = new TrialConsole(consoleRoot, api);

const openForm = document.getElementById("open-form") as HTMLFormElement;
const createForm = document.getElementById("create-form") as HTMLFormElement;
const openError = document.getElementById("open-error") as HTMLElement;

function showOpenError(err: unknown): void {
  openError.hidden = false;
  openError.textContent = err instanceof ApiError ? err.message : String(err);
}

async function openTrial(trialId: string): Promise<void> {
  openError.hidden = true;
  await view.load(trialId);
  const url = new URL(window.location.href);
  url.searchParams.set("trial", trialId);
  window.history.replaceState(null, "", url);
}

openForm.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const id = (document.getElementById("trial-id") as HTMLInputElement).value.trim();
  if (id) void openTrial(id);
});

createForm.addEventListener("submit", async (ev) => {
  ev.preventDefault();
  openError.hidden = true;
  const idField = (document.getElementById("new-trial-id") as HTMLInputElement).value.trim();
  const configText = (document.getElementById("new-config") as HTMLTextAreaElement).value;
  try {
    const config = JSON.parse(configText);
    const created = await api.createTrial(config, idField || undefined);
    await openTrial(created.trial_id);
  } catch (err) {
    showOpenError(err);
  }
});

const fromUrl = params.get("trial");
if (fromUrl) void openTrial(fromUrl);
