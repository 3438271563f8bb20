import { ApiClient } from "./api.js";
import { ChatPanel } from "./ui.js";

function baseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "http://127.0.0.1:8000";
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const api = new ApiClient(baseUrl());
  const panel = new ChatPanel(api, root);
  panel.mount();

  const controls = document.getElementById("controls");
  if (!controls) return;
  controls.innerHTML = `
    <label>agent
      <select id="agent-choice">
        <option>oracle</option>
        <option>rec</option>
        <option>random</option>
        <option>transe</option>
        <option>umgr</option>
      </select>
    </label>
    <label><input type="checkbox" id="history-toggle" checked> with history</label>
    <label>seed <input type="number" id="seed" value="1" style="width:5em"></label>
    <button id="start">start session</button>`;
  const startButton = document.getElementById("start") as HTMLButtonElement;
  startButton.addEventListener("click", () => {
    const agent = (document.getElementById("agent-choice") as HTMLSelectElement).value;
    const withHistory = (document.getElementById("history-toggle") as HTMLInputElement)
      .checked;
    const seed = Number(
      (document.getElementById("seed") as HTMLInputElement).value || "1",
    );
    void panel.start(agent, { generate: { seed, with_history: withHistory } });
  });
}

boot();
