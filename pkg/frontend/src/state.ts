// Session view state. The server is the source of truth: every mutation here
// only folds a server response into render-ready data.

import type {
  Menus,
  SalienceData,
  SessionCreated,
  TranscriptEntry,
  TurnResponse,
  UserBrief,
} from "./api.js";

export interface Message {
  entry: TranscriptEntry;
  explanations: string[][] | null;
}

export class SessionView {
  sessionId: string;
  agent: string;
  status: string;
  menus: Menus;
  brief: UserBrief;
  messages: Message[] = [];
  graphTriples: string[][] = [];
  salience: SalienceData;

  constructor(created: SessionCreated) {
    this.sessionId = created.session_id;
    this.agent = created.agent;
    this.status = created.status;
    this.menus = created.menus;
    this.brief = created.user_brief;
    this.salience = { items: created.menus.items, rows: [] };
    for (const entry of created.transcript) {
      this.messages.push({ entry, explanations: null });
    }
  }

  get open(): boolean {
    return this.status === "open";
  }

  applyTurn(response: TurnResponse): void {
    this.status = response.status;
    this.messages.push({ entry: response.user_action, explanations: null });
    if (response.agent_action) {
      this.messages.push({
        entry: response.agent_action,
        explanations: response.explanations,
      });
    }
    this.graphTriples.push(...response.graph_delta);
  }

  applySalience(data: SalienceData): void {
    this.salience = data;
  }
}

export function describeEntry(entry: TranscriptEntry): string {
  const parts = [entry.act.replace(/_/g, " ")];
  if (entry.item) parts.push(`item=${entry.item}`);
  if (entry.slot) parts.push(`slot=${entry.slot}`);
  if (entry.value) parts.push(`value=${entry.value}`);
  if (entry.sentiment) parts.push(`(${entry.sentiment})`);
  return parts.join(" ");
}
