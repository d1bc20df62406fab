import { ApiClient, ApiError } from "./api.js";
import { LabelingConsole } from "./console.js";

function query(name: string): string | null {
  return new URLSearchParams(window.location.search).get(name);
}

function mount(): void {
  const form = document.getElementById("connect-form") as HTMLFormElement;
  const serviceInput = document.getElementById("service-url") as HTMLInputElement;
  const runInput = document.getElementById("run-id") as HTMLInputElement;
  const configInput = document.getElementById("config-json") as HTMLTextAreaElement;
  const root = document.getElementById("console-root") as HTMLElement;
  const error = document.getElementById("connect-error") as HTMLElement;

  serviceInput.value = query("service") ?? "http://127.0.0.1:8321";
  runInput.value = query("run") ?? "";

  let active: LabelingConsole | null = null;

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    error.textContent = "";
    const api = new ApiClient(serviceInput.value.replace(/\/+$/, ""));

    void (async () => {
      try {
        let runId = runInput.value.trim();
        if (!runId) {
          const text = configInput.value.trim();
          if (!text) throw new Error("provide a run id or a config document");
          const snapshot = await api.startRun(JSON.parse(text));
          runId = snapshot.run_id;
          runInput.value = runId;
        }
        active?.stop();
        active = new LabelingConsole(root, api, runId, { annotator: "console" });
        active.start();
      } catch (err) {
        error.textContent = err instanceof ApiError ? err.message : String(err);
      }
    })();
  });
}

mount();
