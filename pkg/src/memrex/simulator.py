"""User simulator and episode runner.

The simulated user is passive: it opens with a greeting (or, 20% of the
time, by volunteering one preferred value), answers questions truthfully
from its preference map, accepts a recommendation only for the ground-truth
item, and never names the ground truth otherwise. Episode flow alternates
user and agent turns under an utterance cap; after every user turn the
memory graph absorbs the turn's sentiment annotation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .agents import Agent, AgentObservation, AgentScenarioView, ProtocolError
from .catalog import Scenario, ScenarioSet
from .dialog import (
    AgentAct,
    Dialog,
    DialogAction,
    Role,
    Sentiment,
    Turn,
    UserAct,
    validate_action,
)
from .memgraph import (
    EntityKind,
    MemoryGraph,
    Observation,
    apply_observation,
    build_initial,
    policy_masks,
)

MAX_TURNS = 11
INFORM_RATE = 0.2  # chance the greeting branch volunteers a preference instead


@dataclass
class SimulatorState:
    success: bool = False
    turns_used: int = 0
    pending: DialogAction | None = None


@dataclass(frozen=True)
class EpisodeResult:
    dialog: Dialog
    success: bool
    n_turns: int
    failure_reason: str | None = None


def _preferred_values(scenario: Scenario) -> list[str]:
    return scenario.preferred_values()


def _random_greet_inform(scenario: Scenario, rng: random.Random) -> DialogAction:
    if rng.random() < 1.0 - INFORM_RATE:
        return DialogAction(Role.USER, UserAct.GREETING)
    value = rng.choice(_preferred_values(scenario))
    return DialogAction(
        Role.USER, UserAct.INFORM, value_id=value, sentiment=Sentiment.POS_ON
    )


def _find_value_opinion(
    agent_action: DialogAction, scenario: Scenario, rng: random.Random
) -> DialogAction:
    preferred = set(_preferred_values(scenario))
    if agent_action.act is AgentAct.YES_NO_QUESTION:
        value = agent_action.value_id
        sentiment = Sentiment.POS_ON if value in preferred else Sentiment.NEG_ON
        return DialogAction(Role.USER, UserAct.ANSWER, value_id=value, sentiment=sentiment)
    slot = agent_action.slot_id
    chosen = scenario.preference.get(slot)
    if chosen:
        value = rng.choice(sorted(chosen))
        return DialogAction(
            Role.USER, UserAct.ANSWER, value_id=value, sentiment=Sentiment.POS_ON
        )
    # No preference on the asked slot: shrug at a random value of that slot.
    slot_values = sorted(
        v for v, s in scenario.value_slots.items() if s == slot
    )
    if not slot_values:
        raise ProtocolError(f"agent asked about slot {slot!r} unknown to the scenario")
    return DialogAction(
        Role.USER,
        UserAct.ANSWER,
        value_id=rng.choice(slot_values),
        sentiment=Sentiment.NEU_ON,
    )


def user_respond(
    state: SimulatorState,
    agent_action: DialogAction | None,
    scenario: Scenario,
    rng: random.Random,
) -> DialogAction:
    """One user turn. ``agent_action=None`` is the synthetic INIT opener."""
    if agent_action is None:
        return _random_greet_inform(scenario, rng)
    validate_action(agent_action)
    act = agent_action.act

    if act is AgentAct.RECOMMENDATION:
        if agent_action.item_id in scenario.ground_truth:
            state.success = True
            return DialogAction(
                Role.USER,
                UserAct.REPLY,
                item_id=agent_action.item_id,
                sentiment=Sentiment.POS_ON,
            )
        slot = rng.choice(sorted(scenario.preference))
        return DialogAction(Role.USER, UserAct.OPEN_QUESTION, slot_id=slot)

    if act in (AgentAct.OPEN_QUESTION, AgentAct.YES_NO_QUESTION):
        return _find_value_opinion(agent_action, scenario, rng)

    if act is AgentAct.ANSWER:
        if agent_action.value_id is not None:
            preferred = set(_preferred_values(scenario))
            sentiment = (
                Sentiment.POS_ON
                if agent_action.value_id in preferred
                else Sentiment.NEG_ON
            )
            return DialogAction(
                Role.USER,
                UserAct.INFORM,
                value_id=agent_action.value_id,
                sentiment=sentiment,
            )
        # Item-bearing answer. Never name the ground truth in an Inform: pivot
        # to a preference instead of confirming.
        if agent_action.item_id in scenario.ground_truth:
            value = rng.choice(_preferred_values(scenario))
            return DialogAction(
                Role.USER, UserAct.INFORM, value_id=value, sentiment=Sentiment.POS_ON
            )
        return DialogAction(
            Role.USER,
            UserAct.INFORM,
            item_id=agent_action.item_id,
            sentiment=Sentiment.NEG_ON,
        )

    if act is AgentAct.THANKS:
        if state.success:
            return DialogAction(Role.USER, UserAct.THANKS, sentiment=Sentiment.POS_ON)
        return _random_greet_inform(scenario, rng)

    # Agent greeting has no branch of its own; treat it like the opener.
    return _random_greet_inform(scenario, rng)


def observation_from_user_turn(
    graph: MemoryGraph, action: DialogAction
) -> Observation | None:
    """Sentiment annotation carried by a user turn, if it targets an entity."""
    if action.sentiment is None:
        return None
    if action.value_id is not None:
        target = graph.lookup(EntityKind.VALUE, action.value_id)
    elif action.item_id is not None:
        target = graph.lookup(EntityKind.ITEM, action.item_id)
    else:
        return None
    return Observation(action.sentiment.to_relation(), target)


def run_episode(
    agent: Agent,
    scenario: Scenario,
    max_turns: int = MAX_TURNS,
    rng: random.Random | None = None,
    record_rejections: bool = True,
) -> EpisodeResult:
    """Alternate the agent with the simulated user over one scenario.

    The user opens. The episode ends when the user accepts the ground-truth
    recommendation, when the user says thanks, or at the utterance cap.
    ``record_rejections`` additionally logs a neg_on observation on every
    rejected recommendation so the graph reflects the refusal.
    """
    rng = rng or random.Random(0)
    graph = build_initial(scenario)
    items_mask, slots_mask, values_mask = policy_masks(graph, scenario)
    items = [graph.name_of(e) for e in sorted(items_mask)]
    slots = [graph.name_of(e) for e in sorted(slots_mask)]
    values = [graph.name_of(e) for e in sorted(values_mask)]

    agent.reset(AgentScenarioView.from_scenario(scenario))
    state = SimulatorState()
    tried: set[str] = set()
    act_history: list[tuple[Role, object]] = []
    turns: list[Turn] = []
    failure_reason: str | None = None

    def push(action: DialogAction) -> None:
        validate_action(action)
        turns.append(Turn(action, len(turns)))
        act_history.append((action.role, action.act))

    def absorb_user_turn(action: DialogAction) -> None:
        nonlocal graph
        obs = observation_from_user_turn(graph, action)
        if obs is not None:
            graph = apply_observation(graph, obs)

    opener = user_respond(state, None, scenario, rng)
    push(opener)
    absorb_user_turn(opener)

    while len(turns) < max_turns:
        obs = AgentObservation(
            act_history=list(act_history[-AgentObservation.MAX_HISTORY :]),
            graph=graph,
            items=items,
            slots=slots,
            values=values,
            tried_items=set(tried),
        )
        try:
            agent_action = agent.act(obs, rng)
            validate_action(agent_action)
        except Exception as exc:  # degenerate policy or protocol breach
            failure_reason = f"{type(exc).__name__}: {exc}"
            break
        push(agent_action)
        if agent_action.act is AgentAct.RECOMMENDATION:
            tried.add(agent_action.item_id)
        state.pending = agent_action
        if len(turns) >= max_turns:
            break

        user_action = user_respond(state, agent_action, scenario, rng)
        push(user_action)
        absorb_user_turn(user_action)
        if (
            record_rejections
            and agent_action.act is AgentAct.RECOMMENDATION
            and not (
                user_action.act is UserAct.REPLY
                and user_action.sentiment is Sentiment.POS_ON
            )
        ):
            graph = apply_observation(
                graph,
                Observation(
                    Sentiment.NEG_ON.to_relation(),
                    graph.lookup(EntityKind.ITEM, agent_action.item_id),
                ),
            )
        if state.success or user_action.act is UserAct.THANKS:
            break

    state.turns_used = len(turns)
    dialog = Dialog(
        scenario_id=scenario.scenario_id, turns=tuple(turns), success=state.success
    )
    return EpisodeResult(
        dialog=dialog,
        success=state.success,
        n_turns=len(turns),
        failure_reason=failure_reason,
    )


def replay_graph(
    scenario: Scenario,
    dialog: Dialog,
    upto_turn: int,
    record_rejections: bool = True,
) -> MemoryGraph:
    """Rebuild the memory graph as it stood before turn ``upto_turn``.

    Applies the same update rule as ``run_episode``: every sentiment-bearing
    user turn becomes an observation, and a recommendation not followed by a
    positive reply leaves a neg_on mark on the rejected item.
    """
    graph = build_initial(scenario)
    prev_action: DialogAction | None = None
    for turn in dialog.turns[:upto_turn]:
        action = turn.action
        if action.role is Role.USER:
            obs = observation_from_user_turn(graph, action)
            if obs is not None:
                graph = apply_observation(graph, obs)
            if (
                record_rejections
                and prev_action is not None
                and prev_action.act is AgentAct.RECOMMENDATION
                and not (
                    action.act is UserAct.REPLY
                    and action.sentiment is Sentiment.POS_ON
                )
            ):
                graph = apply_observation(
                    graph,
                    Observation(
                        Sentiment.NEG_ON.to_relation(),
                        graph.lookup(EntityKind.ITEM, prev_action.item_id),
                    ),
                )
        prev_action = action
    return graph


def episode_rng(seed: int | str, scenario_id: str, run: int = 0) -> random.Random:
    return random.Random(f"{seed}:{scenario_id}:{run}")


def simulate_corpus(
    agent_factory: Callable[[], Agent],
    scenarios: Sequence[Scenario] | ScenarioSet,
    seed: int | str = 0,
    max_turns: int = MAX_TURNS,
    record_rejections: bool = True,
) -> list[EpisodeResult]:
    """Run one episode per scenario with per-episode derived rng streams."""
    if isinstance(scenarios, ScenarioSet):
        scenarios = scenarios.scenarios
    results = []
    for scenario in scenarios:
        results.append(
            run_episode(
                agent_factory(),
                scenario,
                max_turns=max_turns,
                rng=episode_rng(seed, scenario.scenario_id),
                record_rejections=record_rejections,
            )
        )
    return results
