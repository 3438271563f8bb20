// Client-side mirror of the server's argument-shape table for user acts.
// The pickers only enable the fields listed here, so every action the UI can
// construct passes server validation.

import type { Menus, TurnSelection } from "./api.js";

export type Field = "item" | "slot" | "value" | "sentiment";

export interface ActShape {
  act: string;
  required: Field[];
  optional: Field[];
}

export const USER_ACT_SHAPES: ActShape[] = [
  { act: "greeting", required: [], optional: [] },
  { act: "inform", required: ["value", "sentiment"], optional: [] },
  { act: "answer", required: ["value", "sentiment"], optional: [] },
  { act: "reply", required: ["item", "sentiment"], optional: [] },
  { act: "open_question", required: ["slot"], optional: [] },
  { act: "yes_no_question", required: ["value"], optional: [] },
  { act: "thanks", required: [], optional: ["sentiment"] },
];

export function shapeOf(act: string): ActShape {
  const shape = USER_ACT_SHAPES.find((s) => s.act === act);
  if (!shape) throw new Error(`unknown user act ${act}`);
  return shape;
}

export function enabledFields(act: string): Set<Field> {
  const shape = shapeOf(act);
  return new Set([...shape.required, ...shape.optional]);
}

export function selectionComplete(selection: TurnSelection): boolean {
  const shape = shapeOf(selection.act);
  return shape.required.every((field) => Boolean(selection[field]));
}

export function buildSelection(
  act: string,
  fields: Partial<Record<Field, string>>,
): TurnSelection {
  const enabled = enabledFields(act);
  const selection: TurnSelection = { act };
  for (const field of ["item", "slot", "value", "sentiment"] as Field[]) {
    const value = fields[field];
    if (enabled.has(field) && value) selection[field] = value;
  }
  if (!selectionComplete(selection)) {
    const missing = shapeOf(act).required.filter((f) => !selection[f]);
    throw new Error(`${act} needs ${missing.join(", ")}`);
  }
  return selection;
}

// Every concrete action the pickers can emit for the given menus; the shape
// test replays all of these against a live server.
export function allCombinations(menus: Menus): TurnSelection[] {
  const first = <T>(xs: T[]): T[] => (xs.length ? [xs[0] as T] : []);
  const out: TurnSelection[] = [];
  for (const shape of USER_ACT_SHAPES) {
    const itemChoices = shape.required.includes("item") ? menus.items : [undefined];
    const slotChoices = shape.required.includes("slot") ? menus.slots : [undefined];
    const valueChoices = shape.required.includes("value") ? menus.values : [undefined];
    const sentimentChoices = shape.required.includes("sentiment")
      ? menus.sentiments
      : shape.optional.includes("sentiment")
        ? [undefined, ...first(menus.sentiments)]
        : [undefined];
    for (const item of itemChoices)
      for (const slot of slotChoices)
        for (const value of valueChoices)
          for (const sentiment of sentimentChoices) {
            const selection: TurnSelection = { act: shape.act };
            if (item) selection.item = item;
            if (slot) selection.slot = slot;
            if (value) selection.value = value;
            if (sentiment) selection.sentiment = sentiment;
            out.push(selection);
          }
  }
  return out;
}
