"""Agent interface and the non-neural baseline policies.

An agent sees only what the human agent player saw: the candidate and
history items with their values (never the user's preference or the ground
truth), the memory graph as updated so far, and the recent act history.
Agents are stateful within an episode; create one instance per episode and
call ``reset`` with the scenario view.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .catalog import Scenario
from .dialog import AgentAct, DialogAction, Role, UserAct, validate_action
from .memgraph import EntityKind, MemoryGraph, RelationKind


class ProtocolError(RuntimeError):
    """An action does not fit the episode protocol."""


@dataclass(frozen=True)
class AgentScenarioView:
    """Agent-visible scenario knowledge: everything except P and T."""

    user_id: str
    candidates: tuple[str, ...]
    history: tuple[str, ...]
    item_values: Mapping[str, tuple[str, ...]]
    value_slots: Mapping[str, str]

    @staticmethod
    def from_scenario(scenario: Scenario) -> "AgentScenarioView":
        return AgentScenarioView(
            user_id=scenario.user_id,
            candidates=scenario.candidates,
            history=scenario.history,
            item_values=scenario.item_values,
            value_slots=scenario.value_slots,
        )

    def values_of(self, item_id: str) -> frozenset[str]:
        return frozenset(self.item_values[item_id])

    def slot_values(self, item_id: str, slot_id: str) -> list[str]:
        return sorted(
            v for v in self.item_values[item_id] if self.value_slots[v] == slot_id
        )


@dataclass
class AgentObservation:
    """What an agent may look at when choosing its next action."""

    act_history: list[tuple[Role, object]]  # (role, act) pairs, oldest first
    graph: MemoryGraph
    items: list[str]  # candidate item ids, registration order
    slots: list[str]
    values: list[str]
    tried_items: set[str] = field(default_factory=set)

    MAX_HISTORY = 10

    def recent_acts(self) -> list[tuple[Role, object]]:
        return self.act_history[-self.MAX_HISTORY :]

    def sentiment_targets(self, relation: RelationKind) -> list[str]:
        """Names of entities the current dialog marked with ``relation``."""
        g = self.graph
        return [
            g.name_of(e) for e in g.neighbors(g.m_cur_dialog, relation, "out")
        ]


class Agent(Protocol):
    name: str

    def reset(self, view: AgentScenarioView) -> None: ...

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction: ...


def _checked(action: DialogAction) -> DialogAction:
    validate_action(action)
    return action


class RandomAgent:
    """Uniform over the six agent acts, uniform over the matching entity set."""

    name = "random"

    def reset(self, view: AgentScenarioView) -> None:
        del view

    def item_salience(self, obs: AgentObservation) -> dict[str, float]:
        return {c: 1.0 / len(obs.items) for c in obs.items}

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction:
        act = rng.choice(list(AgentAct))
        if act is AgentAct.RECOMMENDATION:
            return _checked(DialogAction(Role.AGENT, act, item_id=rng.choice(obs.items)))
        if act is AgentAct.OPEN_QUESTION:
            return _checked(DialogAction(Role.AGENT, act, slot_id=rng.choice(obs.slots)))
        if act is AgentAct.YES_NO_QUESTION:
            return _checked(DialogAction(Role.AGENT, act, value_id=rng.choice(obs.values)))
        if act is AgentAct.ANSWER:
            return _checked(DialogAction(Role.AGENT, act, value_id=rng.choice(obs.values)))
        return _checked(DialogAction(Role.AGENT, act))


class RecAgent:
    """Always recommends; never repeats an item until the candidates run out."""

    name = "rec"

    def reset(self, view: AgentScenarioView) -> None:
        del view

    def item_salience(self, obs: AgentObservation) -> dict[str, float]:
        untried = [c for c in obs.items if c not in obs.tried_items]
        pool = untried or obs.items
        return {c: (1.0 / len(pool) if c in pool else 0.0) for c in obs.items}

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction:
        untried = [c for c in obs.items if c not in obs.tried_items]
        pool = untried or obs.items
        return _checked(
            DialogAction(Role.AGENT, AgentAct.RECOMMENDATION, item_id=rng.choice(pool))
        )


class OracleAgent:
    """Entropy-greedy teacher used to generate supervision corpora.

    Tracks the candidates consistent with every observation so far, asks the
    question expected to shrink that set the most (yes/no when the user's
    history supports the majority value, open otherwise), and recommends once
    at most two consistent candidates remain or questions stop being
    informative.
    """

    name = "oracle"

    def __init__(self) -> None:
        self.view: AgentScenarioView | None = None
        self.asked_slots: set[str] = set()
        self.asked_values: set[str] = set()
        self.history_values: frozenset[str] = frozenset()

    def reset(self, view: AgentScenarioView) -> None:
        self.view = view
        self.asked_slots = set()
        self.asked_values = set()
        vals: set[str] = set()
        for item_id in view.history:
            vals |= view.values_of(item_id)
        self.history_values = frozenset(vals)

    def item_salience(self, obs: AgentObservation) -> dict[str, float]:
        consistent = set(self.consistent_candidates(obs))
        return {c: (1.0 if c in consistent else 0.0) for c in obs.items}

    def consistent_candidates(self, obs: AgentObservation) -> list[str]:
        assert self.view is not None
        pos_values = set(obs.sentiment_targets(RelationKind.POS_ON)) & set(obs.values)
        neg_values = set(obs.sentiment_targets(RelationKind.NEG_ON)) & set(obs.values)
        neg_items = set(obs.sentiment_targets(RelationKind.NEG_ON)) & set(obs.items)
        out = []
        for c in obs.items:
            values = self.view.values_of(c)
            if c in neg_items:
                continue
            if not pos_values <= values:
                continue
            if values & neg_values:
                continue
            out.append(c)
        return out

    def _expected_remaining(self, slot: str, pool: Sequence[str]) -> tuple[float, str]:
        """(expected surviving candidates, majority value) for asking ``slot``.

        Majority ties prefer values the user's history supports, mirroring
        agents who confirm rather than ask open questions when they can.
        """
        assert self.view is not None
        counts: dict[str, int] = {}
        for c in pool:
            for v in self.view.slot_values(c, slot):
                counts[v] = counts.get(v, 0) + 1
        if not counts:
            return (float(len(pool)), "")
        total = sum(counts.values())
        expected = sum(n * n for n in counts.values()) / total
        majority = min(
            counts,
            key=lambda v: (-counts[v], v not in self.history_values, v),
        )
        return (expected, majority)

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction:
        if self.view is None:
            raise ProtocolError("oracle agent used before reset")
        agent_acts = [a for r, a in obs.act_history if r is Role.AGENT]
        if not agent_acts:
            return _checked(DialogAction(Role.AGENT, AgentAct.GREETING))
        if obs.act_history and obs.act_history[-1] == (Role.USER, UserAct.REPLY):
            return _checked(DialogAction(Role.AGENT, AgentAct.THANKS))

        pool = self.consistent_candidates(obs)
        if not pool:  # every candidate contradicted; fall back to untried ones
            pool = [c for c in obs.items if c not in obs.tried_items] or list(obs.items)

        best_slot = None
        best_expected = float(len(pool))
        best_majority = ""
        if len(pool) > 2:
            for slot in obs.slots:
                if slot in self.asked_slots:
                    continue
                expected, majority = self._expected_remaining(slot, pool)
                if expected < best_expected - 1e-9:
                    best_slot, best_expected, best_majority = slot, expected, majority

        if best_slot is None:
            pos_values = set(obs.sentiment_targets(RelationKind.POS_ON))
            untried = [c for c in pool if c not in obs.tried_items]
            ranked = untried or [c for c in obs.items if c not in obs.tried_items] or pool
            choice = min(
                ranked,
                key=lambda c: (-len(self.view.values_of(c) & pos_values), c),
            )
            return _checked(
                DialogAction(Role.AGENT, AgentAct.RECOMMENDATION, item_id=choice)
            )

        self.asked_slots.add(best_slot)
        if best_majority and best_majority in self.history_values:
            self.asked_values.add(best_majority)
            return _checked(
                DialogAction(
                    Role.AGENT, AgentAct.YES_NO_QUESTION, value_id=best_majority
                )
            )
        return _checked(DialogAction(Role.AGENT, AgentAct.OPEN_QUESTION, slot_id=best_slot))
