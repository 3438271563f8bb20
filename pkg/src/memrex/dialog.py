"""Structured dialog vocabulary: acts, argument-shape rules, turns, corpora.

Every utterance is a structured action (no surface text). The argument-shape
table below is the contract the whole system enforces: simulators, agents,
the corpus reader and the HTTP service all funnel actions through
``validate_action``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .memgraph import EntityId, MemoryGraph, RelationKind


class ActionShapeError(ValueError):
    """An action carries a missing, extra, or ill-typed argument."""

    def __init__(self, message: str, fields: tuple[str, ...] = ()):
        super().__init__(message)
        self.fields = fields


class CorpusFormatError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class DegeneratePolicyError(RuntimeError):
    """The policy must name an entity but its masked set is empty."""


class Role(Enum):
    USER = "user"
    AGENT = "agent"


class UserAct(Enum):
    GREETING = "greeting"
    INFORM = "inform"
    ANSWER = "answer"
    REPLY = "reply"
    OPEN_QUESTION = "open_question"
    YES_NO_QUESTION = "yes_no_question"
    THANKS = "thanks"


class AgentAct(Enum):
    GREETING = "greeting"
    OPEN_QUESTION = "open_question"
    YES_NO_QUESTION = "yes_no_question"
    RECOMMENDATION = "recommendation"
    ANSWER = "answer"
    THANKS = "thanks"


class Sentiment(Enum):
    POS_ON = "pos_on"
    NEG_ON = "neg_on"
    NEU_ON = "neu_on"

    def to_relation(self) -> RelationKind:
        return RelationKind(self.value)


AGENT_ACTS: tuple[AgentAct, ...] = tuple(AgentAct)
USER_ACTS: tuple[UserAct, ...] = tuple(UserAct)


@dataclass(frozen=True)
class DialogAction:
    role: Role
    act: UserAct | AgentAct
    item_id: str | None = None
    slot_id: str | None = None
    value_id: str | None = None
    sentiment: Sentiment | None = None

    def to_dict(self) -> dict:
        out: dict = {"role": self.role.value, "act": self.act.value}
        if self.item_id is not None:
            out["item"] = self.item_id
        if self.slot_id is not None:
            out["slot"] = self.slot_id
        if self.value_id is not None:
            out["value"] = self.value_id
        if self.sentiment is not None:
            out["sentiment"] = self.sentiment.value
        return out

    @staticmethod
    def from_dict(payload: Mapping) -> "DialogAction":
        role = Role(payload["role"])
        act_cls = UserAct if role is Role.USER else AgentAct
        sentiment = payload.get("sentiment")
        return DialogAction(
            role=role,
            act=act_cls(payload["act"]),
            item_id=payload.get("item"),
            slot_id=payload.get("slot"),
            value_id=payload.get("value"),
            sentiment=Sentiment(sentiment) if sentiment is not None else None,
        )


# Argument shape per (role, act): (required-group, required, optional).
# "target" means exactly one of item/value. Anything not listed is forbidden.
_SHAPES: dict[tuple[Role, Enum], dict] = {
    (Role.AGENT, AgentAct.GREETING): dict(),
    (Role.AGENT, AgentAct.OPEN_QUESTION): dict(required=("slot_id",)),
    (Role.AGENT, AgentAct.YES_NO_QUESTION): dict(required=("value_id",)),
    (Role.AGENT, AgentAct.RECOMMENDATION): dict(required=("item_id",)),
    (Role.AGENT, AgentAct.ANSWER): dict(target=True),
    (Role.AGENT, AgentAct.THANKS): dict(),
    (Role.USER, UserAct.GREETING): dict(),
    (Role.USER, UserAct.INFORM): dict(target=True, required=("sentiment",)),
    (Role.USER, UserAct.ANSWER): dict(target=True, required=("sentiment",)),
    (Role.USER, UserAct.REPLY): dict(required=("item_id", "sentiment")),
    (Role.USER, UserAct.OPEN_QUESTION): dict(required=("slot_id",)),
    (Role.USER, UserAct.YES_NO_QUESTION): dict(required=("value_id",)),
    (Role.USER, UserAct.THANKS): dict(optional=("sentiment",)),
}

_ARG_FIELDS = ("item_id", "slot_id", "value_id", "sentiment")


def validate_action(action: DialogAction) -> None:
    """Check the argument shape; raises ActionShapeError naming the field."""
    act_cls = UserAct if action.role is Role.USER else AgentAct
    if not isinstance(action.act, act_cls):
        raise ActionShapeError(
            f"{action.act} is not a {action.role.value}-side act", ("act",)
        )
    shape = _SHAPES[(action.role, action.act)]
    required = set(shape.get("required", ()))
    optional = set(shape.get("optional", ()))
    allowed = set(required) | optional
    if shape.get("target"):
        item, value = action.item_id, action.value_id
        if (item is None) == (value is None):
            raise ActionShapeError(
                f"{action.role.value} {action.act.value} needs exactly one of "
                "item or value",
                ("item_id", "value_id"),
            )
        allowed |= {"item_id", "value_id"}
    for name in required:
        if getattr(action, name) is None:
            raise ActionShapeError(
                f"{action.role.value} {action.act.value} requires {name}", (name,)
            )
    for name in _ARG_FIELDS:
        if name not in allowed and getattr(action, name) is not None:
            raise ActionShapeError(
                f"{action.role.value} {action.act.value} must not carry {name}",
                (name,),
            )


@dataclass(frozen=True)
class Turn:
    action: DialogAction
    turn_index: int


@dataclass(frozen=True)
class Dialog:
    scenario_id: str
    turns: tuple[Turn, ...]
    success: bool

    def agent_turn_indices(self) -> list[int]:
        return [t.turn_index for t in self.turns if t.action.role is Role.AGENT]

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "success": self.success,
            "turns": [t.action.to_dict() for t in self.turns],
        }

    @staticmethod
    def from_dict(payload: Mapping) -> "Dialog":
        turns = tuple(
            Turn(DialogAction.from_dict(t), i)
            for i, t in enumerate(payload["turns"])
        )
        return Dialog(
            scenario_id=payload["scenario_id"],
            turns=turns,
            success=bool(payload["success"]),
        )


def validate_dialog(dialog: Dialog, max_turns: int | None = None) -> None:
    """Shape-check every action and the strict user-first alternation."""
    for i, turn in enumerate(dialog.turns):
        if turn.turn_index != i:
            raise ActionShapeError(f"turn index {turn.turn_index} != position {i}")
        expected = Role.USER if i % 2 == 0 else Role.AGENT
        if turn.action.role is not expected:
            raise ActionShapeError(
                f"turn {i} has role {turn.action.role.value}, expected {expected.value}"
            )
        validate_action(turn.action)
    if max_turns is not None and len(dialog.turns) > max_turns:
        raise ActionShapeError(f"dialog exceeds {max_turns} turns")


@dataclass(frozen=True)
class PolicyLabels:
    """Gold act + arguments for one agent turn."""

    act: AgentAct
    item_id: str | None = None
    slot_id: str | None = None
    value_id: str | None = None

    def as_action(self) -> DialogAction:
        return DialogAction(
            role=Role.AGENT,
            act=self.act,
            item_id=self.item_id,
            slot_id=self.slot_id,
            value_id=self.value_id,
        )


@dataclass(frozen=True)
class Policy:
    """Per-turn model output: act distribution plus masked entity scores."""

    act_probs: dict[AgentAct, float]
    item_scores: dict[EntityId, float]
    slot_scores: dict[EntityId, float]
    value_scores: dict[EntityId, float]

    def top_k(self, kind: str, k: int) -> list[EntityId]:
        table = getattr(self, f"{kind}_scores")
        ranked = sorted(table, key=lambda e: (-table[e], e.sort_key()))
        return ranked[:k]


def _argmax_entity(scores: Mapping[EntityId, float], what: str) -> EntityId:
    if not scores:
        raise DegeneratePolicyError(f"no masked-in {what} entity to choose from")
    return min(scores, key=lambda e: (-scores[e], e.sort_key()))


def policy_to_action(
    policy: Policy, graph: MemoryGraph, answer_with_item: bool = False
) -> DialogAction:
    """Decode a policy into the agent action it ranks first.

    The act is the argmax of the act distribution; its argument is the top
    entity of the matching masked score vector. Score ties resolve to the
    lowest EntityId, so storage order never matters.
    """
    act = min(AGENT_ACTS, key=lambda a: (-policy.act_probs.get(a, 0.0), a.value))
    item_id = slot_id = value_id = None
    if act is AgentAct.RECOMMENDATION:
        item_id = graph.name_of(_argmax_entity(policy.item_scores, "item"))
    elif act is AgentAct.OPEN_QUESTION:
        slot_id = graph.name_of(_argmax_entity(policy.slot_scores, "slot"))
    elif act is AgentAct.YES_NO_QUESTION:
        value_id = graph.name_of(_argmax_entity(policy.value_scores, "value"))
    elif act is AgentAct.ANSWER:
        if answer_with_item:
            item_id = graph.name_of(_argmax_entity(policy.item_scores, "item"))
        else:
            value_id = graph.name_of(_argmax_entity(policy.value_scores, "value"))
    action = DialogAction(
        role=Role.AGENT, act=act, item_id=item_id, slot_id=slot_id, value_id=value_id
    )
    validate_action(action)
    return action


def write_corpus(dialogs: Iterable[Dialog], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogs:
            validate_dialog(d)
            fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


def read_corpus(path: str | Path) -> list[Dialog]:
    dialogs: list[Dialog] = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                dialog = Dialog.from_dict(json.loads(line))
                validate_dialog(dialog)
            except (ValueError, KeyError) as exc:
                raise CorpusFormatError(path, n, str(exc)) from exc
            dialogs.append(dialog)
    return dialogs
