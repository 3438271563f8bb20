// Salience heatmap: one row per agent decision point, one column per
// candidate. Rows are normalized for display; hovering a cell shows the raw
// score.

import type { SalienceData } from "./api.js";

function cellColor(normalized: number): string {
  // white -> deep blue, matching darker == more salient
  const level = Math.round(255 - normalized * 160);
  return `rgb(${level}, ${level}, 255)`;
}

export function renderHeatmap(container: HTMLElement, data: SalienceData): void {
  container.textContent = "";
  if (data.rows.length === 0) {
    const empty = document.createElement("p");
    empty.className = "heat-empty";
    empty.textContent = "no agent turns yet";
    container.append(empty);
    return;
  }
  const table = document.createElement("table");
  table.className = "heatmap";
  const head = document.createElement("tr");
  head.append(document.createElement("th"));
  for (const item of data.items) {
    const th = document.createElement("th");
    th.textContent = item;
    head.append(th);
  }
  table.append(head);
  for (const row of data.rows) {
    const tr = document.createElement("tr");
    tr.className = "heat-row";
    const label = document.createElement("th");
    label.textContent = `turn ${row.turn_index}`;
    tr.append(label);
    const max = Math.max(...row.scores, 1e-9);
    const min = Math.min(...row.scores);
    const span = max - min || 1;
    row.scores.forEach((score, i) => {
      const td = document.createElement("td");
      const normalized = (score - min) / span;
      td.style.backgroundColor = cellColor(normalized);
      td.title = `${data.items[i]}: ${score.toFixed(4)}`;
      td.textContent = score.toFixed(2);
      tr.append(td);
    });
    table.append(tr);
  }
  container.append(table);
}
