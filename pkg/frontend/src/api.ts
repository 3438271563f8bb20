// Typed client for the session service. Errors carry the server's detail
// string verbatim so the UI can surface them unchanged.

export interface Menus {
  acts: string[];
  sentiments: string[];
  items: string[];
  slots: string[];
  values: string[];
  values_by_slot: Record<string, string[]>;
  history_items: string[];
}

export interface UserBrief {
  preference: Record<string, string[]>;
  ground_truth: string;
  history: string[];
}

export interface TranscriptEntry {
  role: string;
  act: string;
  item?: string;
  slot?: string;
  value?: string;
  sentiment?: string;
}

export interface SessionCreated {
  session_id: string;
  agent: string;
  scenario_id: string;
  status: string;
  transcript: TranscriptEntry[];
  max_turns: number;
  menus: Menus;
  user_brief: UserBrief;
}

export interface TurnSelection {
  act: string;
  item?: string;
  slot?: string;
  value?: string;
  sentiment?: string;
}

export interface ScoredEntity {
  name: string;
  score: number;
}

export interface PolicySnapshot {
  acts: Record<string, number>;
  items: ScoredEntity[];
  slots: ScoredEntity[];
  values: ScoredEntity[];
}

export interface TurnResponse {
  session_id: string;
  status: string;
  user_action: TranscriptEntry;
  agent_action: TranscriptEntry | null;
  graph_delta: string[][];
  explanations: string[][] | null;
  policy: PolicySnapshot | null;
  n_turns: number;
}

export interface SalienceData {
  items: string[];
  rows: { turn_index: number; scores: number[] }[];
}

export interface GraphData {
  entities: { kind: string; index: number; name: string }[];
  triples: string[][];
}

async function parse<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status} ${response.statusText}`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new Error(detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  async createSession(
    agent: string,
    options: { scenario_id?: string; generate?: { seed: number; with_history: boolean } },
  ): Promise<SessionCreated> {
    const response = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ agent, ...options }),
    });
    return parse<SessionCreated>(response);
  }

  async postTurn(sessionId: string, selection: TurnSelection): Promise<TurnResponse> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/turns`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(selection),
    });
    return parse<TurnResponse>(response);
  }

  async graph(sessionId: string): Promise<GraphData> {
    return parse<GraphData>(await fetch(`${this.baseUrl}/sessions/${sessionId}/graph`));
  }

  async salience(sessionId: string): Promise<SalienceData> {
    return parse<SalienceData>(
      await fetch(`${this.baseUrl}/sessions/${sessionId}/salience`),
    );
  }

  async explanations(sessionId: string, item: string): Promise<{ paths: string[][] }> {
    const url = new URL(`${this.baseUrl}/sessions/${sessionId}/explanations`);
    url.searchParams.set("item", item);
    return parse<{ paths: string[][] }>(await fetch(url));
  }
}
