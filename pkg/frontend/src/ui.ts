// DOM wiring: pickers driven by server menus, transcript, graph triple
// panel, and the salience heatmap. All state lives in SessionView; the DOM
// is re-rendered from it after every server response.

import { ApiClient, type TurnSelection } from "./api.js";
import { renderHeatmap } from "./heatmap.js";
import { SessionView, describeEntry } from "./state.js";
import { buildSelection, enabledFields, shapeOf, type Field } from "./shapes.js";

export class ChatPanel {
  private view: SessionView | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  mount(): void {
    this.root.innerHTML = `
      <div class="layout">
        <section class="left">
          <div id="banner" class="banner" hidden></div>
          <div id="brief" class="brief"></div>
          <div id="history" class="history"></div>
          <ul id="transcript" class="transcript"></ul>
          <form id="composer" class="composer">
            <select id="act" name="act"></select>
            <select id="item" name="item" disabled></select>
            <select id="slot" name="slot" disabled></select>
            <select id="value" name="value" disabled></select>
            <select id="sentiment" name="sentiment" disabled></select>
            <button id="send" type="submit">send</button>
          </form>
          <div id="status" class="status"></div>
        </section>
        <section class="right">
          <h3>memory graph</h3>
          <ul id="graph" class="graph"></ul>
          <h3>item salience</h3>
          <div id="salience"></div>
        </section>
      </div>`;
    const composer = this.element<HTMLFormElement>("composer");
    composer.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.send();
    });
    this.element<HTMLSelectElement>("act").addEventListener("change", () =>
      this.syncPickers(),
    );
  }

  element<T extends HTMLElement>(id: string): T {
    const node = this.root.querySelector(`#${id}`);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  async start(
    agent: string,
    options: { scenario_id?: string; generate?: { seed: number; with_history: boolean } },
  ): Promise<SessionView> {
    try {
      const created = await this.api.createSession(agent, options);
      this.view = new SessionView(created);
      this.renderAll();
      return this.view;
    } catch (error) {
      this.showError(error);
      throw error;
    }
  }

  currentSelection(): TurnSelection {
    const act = this.element<HTMLSelectElement>("act").value;
    const fields: Partial<Record<Field, string>> = {};
    for (const field of ["item", "slot", "value", "sentiment"] as Field[]) {
      const select = this.element<HTMLSelectElement>(field);
      if (!select.disabled && select.value) fields[field] = select.value;
    }
    return buildSelection(act, fields);
  }

  async send(selection?: TurnSelection): Promise<void> {
    if (!this.view || !this.view.open) return;
    try {
      const chosen = selection ?? this.currentSelection();
      const response = await this.api.postTurn(this.view.sessionId, chosen);
      this.view.applyTurn(response);
      this.view.applySalience(await this.api.salience(this.view.sessionId));
      this.hideError();
      this.renderAll();
    } catch (error) {
      this.showError(error);
    }
  }

  showError(error: unknown): void {
    const banner = this.element<HTMLDivElement>("banner");
    banner.hidden = false;
    banner.textContent = error instanceof Error ? error.message : String(error);
  }

  hideError(): void {
    this.element<HTMLDivElement>("banner").hidden = true;
  }

  renderAll(): void {
    if (!this.view) return;
    this.renderBrief();
    this.renderHistoryPanel();
    this.renderTranscript();
    this.renderComposer();
    this.renderGraph();
    renderHeatmap(this.element("salience"), this.view.salience);
    this.element<HTMLDivElement>("status").textContent =
      `session ${this.view.status}`;
  }

  private renderBrief(): void {
    const view = this.view!;
    const brief = this.element<HTMLDivElement>("brief");
    const prefs = Object.entries(view.brief.preference)
      .map(([slot, values]) => `${slot}: ${values.join(", ")}`)
      .join(" | ");
    brief.innerHTML = `<strong>your goal:</strong> ${view.brief.ground_truth}<br>` +
      `<strong>your preferences:</strong> ${prefs}`;
  }

  private renderHistoryPanel(): void {
    const view = this.view!;
    const panel = this.element<HTMLDivElement>("history");
    if (view.menus.history_items.length === 0) {
      panel.textContent = "";
      panel.hidden = true;
      return;
    }
    panel.hidden = false;
    panel.innerHTML = `<strong>your past visits:</strong> ${view.menus.history_items.join(", ")}`;
  }

  private renderTranscript(): void {
    const list = this.element<HTMLUListElement>("transcript");
    list.textContent = "";
    for (const message of this.view!.messages) {
      const li = document.createElement("li");
      li.className = `msg msg-${message.entry.role}`;
      li.textContent = `${message.entry.role}: ${describeEntry(message.entry)}`;
      if (message.explanations && message.explanations.length) {
        const why = document.createElement("ul");
        why.className = "explanations";
        for (const path of message.explanations.slice(0, 3)) {
          const step = document.createElement("li");
          step.textContent = path.join(" -> ");
          why.append(step);
        }
        li.append(why);
      }
      list.append(li);
    }
  }

  private renderComposer(): void {
    const view = this.view!;
    const act = this.element<HTMLSelectElement>("act");
    if (act.options.length === 0) {
      for (const name of view.menus.acts) {
        const option = document.createElement("option");
        option.value = name;
        option.textContent = name.replace(/_/g, " ");
        act.append(option);
      }
    }
    this.fill("item", view.menus.items);
    this.fill("slot", view.menus.slots);
    this.fill("value", view.menus.values);
    this.fill("sentiment", view.menus.sentiments);
    this.syncPickers();
    const closed = !view.open;
    for (const id of ["act", "item", "slot", "value", "sentiment", "send"]) {
      (this.element<HTMLSelectElement | HTMLButtonElement>(id)).disabled = closed;
    }
    if (!closed) this.syncPickers();
  }

  private fill(id: string, names: string[]): void {
    const select = this.element<HTMLSelectElement>(id);
    if (select.options.length) return;
    for (const name of names) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      select.append(option);
    }
  }

  // shape rules drive which pickers are live for the chosen act
  syncPickers(): void {
    const act = this.element<HTMLSelectElement>("act").value;
    if (!act) return;
    const enabled = enabledFields(act);
    for (const field of ["item", "slot", "value", "sentiment"] as Field[]) {
      this.element<HTMLSelectElement>(field).disabled = !enabled.has(field);
    }
    void shapeOf(act);
  }

  private renderGraph(): void {
    const list = this.element<HTMLUListElement>("graph");
    list.textContent = "";
    for (const [head, relation, tail] of this.view!.graphTriples) {
      const li = document.createElement("li");
      li.className = "triple";
      li.textContent = `(${head}, ${relation}, ${tail})`;
      list.append(li);
    }
  }
}
