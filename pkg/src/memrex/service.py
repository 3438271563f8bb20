"""Live session core and the HTTP service around it.

A session puts a human in the user seat against any agent: the server keeps
the memory graph, validates structured turns against the current menus,
runs the agent, and exposes graph deltas, explanation paths and per-turn
item salience. The same ``SessionManager`` drives both the HTTP API and the
terminal chat.
"""

from __future__ import annotations

import random
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .agents import AgentObservation, AgentScenarioView, OracleAgent, RandomAgent, RecAgent
from .catalog import Catalog, CatalogConfig, Scenario, generate_scenario, synthesize_catalog
from .dialog import (
    ActionShapeError,
    AgentAct,
    DialogAction,
    Role,
    Sentiment,
    UserAct,
    validate_action,
)
from .memgraph import EntityKind, MemoryGraph, Observation, apply_observation, build_initial, explain_paths, policy_masks
from .simulator import MAX_TURNS, observation_from_user_turn
from .transe import TransEAgent, TransEConfig, load_table, scenario_triples, train_transe
from .umgr import UMGRAgent, load_checkpoint

AGENT_NAMES = ("random", "rec", "oracle", "transe", "umgr")


class ServiceError(ValueError):
    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclass
class Session:
    session_id: str
    scenario: Scenario
    agent: object
    agent_name: str
    graph: MemoryGraph
    rng: random.Random
    status: str = "open"  # open | succeeded | ended
    transcript: list[dict] = field(default_factory=list)
    act_history: list[tuple[Role, object]] = field(default_factory=list)
    tried: set[str] = field(default_factory=set)
    salience_rows: list[dict] = field(default_factory=list)
    last_recommendation: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def masks_names(self) -> tuple[list[str], list[str], list[str]]:
        items_m, slots_m, values_m = policy_masks(self.graph, self.scenario)
        g = self.graph
        return (
            [g.name_of(e) for e in sorted(items_m)],
            [g.name_of(e) for e in sorted(slots_m)],
            [g.name_of(e) for e in sorted(values_m)],
        )

    def observation(self) -> AgentObservation:
        items, slots, values = self.masks_names()
        return AgentObservation(
            act_history=list(self.act_history[-AgentObservation.MAX_HISTORY :]),
            graph=self.graph,
            items=items,
            slots=slots,
            values=values,
            tried_items=set(self.tried),
        )


class SessionManager:
    """Owns catalogs, scenario registries, agents, and live sessions."""

    def __init__(
        self,
        catalog: Catalog | None = None,
        scenarios: Mapping[str, Scenario] | None = None,
        checkpoint: str | Path | None = None,
        transe_table: str | Path | None = None,
        record_rejections: bool = True,
    ):
        self.catalog = catalog or synthesize_catalog(CatalogConfig())
        self.scenarios = dict(scenarios or {})
        self.checkpoint = Path(checkpoint) if checkpoint else None
        self.transe_table = Path(transe_table) if transe_table else None
        self.record_rejections = record_rejections
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    # -- agent construction -------------------------------------------------

    def _make_agent(self, name: str, scenario: Scenario):
        if name == "random":
            return RandomAgent()
        if name == "rec":
            return RecAgent()
        if name == "oracle":
            return OracleAgent()
        if name == "transe":
            if self.transe_table is not None:
                table = load_table(self.transe_table)
            else:
                # demo fallback: embeddings fitted to this scenario's graph
                table, _ = train_transe(
                    scenario_triples([scenario]), TransEConfig(epochs=200, seed=0)
                )
            return TransEAgent(table)
        if name == "umgr":
            if self.checkpoint is None:
                raise ServiceError("agent 'umgr' needs a checkpoint", status=400)
            store, config = load_checkpoint(self.checkpoint)
            return UMGRAgent(store, config)
        raise ServiceError(
            f"unknown agent {name!r}; valid agents: {', '.join(AGENT_NAMES)}"
        )

    # -- session lifecycle ----------------------------------------------------

    def create(
        self,
        agent_name: str,
        generate: Mapping | None = None,
        scenario_id: str | None = None,
    ) -> dict:
        if agent_name not in AGENT_NAMES:
            raise ServiceError(
                f"unknown agent {agent_name!r}; valid agents: {', '.join(AGENT_NAMES)}"
            )
        if generate is None and scenario_id is None:
            raise ServiceError("provide either generate{seed,with_history} or scenario_id")
        if scenario_id is not None:
            scenario = self.scenarios.get(scenario_id)
            if scenario is None:
                raise ServiceError(f"unknown scenario {scenario_id!r}", status=404)
        else:
            seed = generate.get("seed", 0)
            with_history = bool(generate.get("with_history", True))
            try:
                scenario = generate_scenario(
                    self.catalog, f"live_{seed}", with_history, seed=seed
                )
            except ValueError as exc:
                raise ServiceError(f"scenario generation failed: {exc}") from exc
        agent = self._make_agent(agent_name, scenario)
        agent.reset(AgentScenarioView.from_scenario(scenario))
        session = Session(
            session_id=uuid.uuid4().hex,
            scenario=scenario,
            agent=agent,
            agent_name=agent_name,
            graph=build_initial(scenario),
            rng=random.Random(f"session:{scenario.scenario_id}"),
        )
        with self._registry_lock:
            self.sessions[session.session_id] = session
        payload = self._session_payload(session)
        payload["menus"] = self._menus(session)
        payload["user_brief"] = {
            "preference": {s: list(v) for s, v in sorted(scenario.preference.items())},
            "ground_truth": scenario.ground_truth[0],
            "history": list(scenario.history),
        }
        return payload

    def _get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError(f"unknown session {session_id!r}", status=404)
        return session

    def _session_payload(self, session: Session) -> dict:
        return {
            "session_id": session.session_id,
            "agent": session.agent_name,
            "scenario_id": session.scenario.scenario_id,
            "status": session.status,
            "transcript": list(session.transcript),
            "max_turns": MAX_TURNS,
        }

    def _menus(self, session: Session) -> dict:
        items, slots, values = session.masks_names()
        value_slots = session.scenario.value_slots
        grouped: dict[str, list[str]] = {}
        for v in values:
            grouped.setdefault(value_slots[v], []).append(v)
        return {
            "acts": [a.value for a in UserAct],
            "sentiments": [s.value for s in Sentiment],
            "items": items,
            "slots": slots,
            "values": values,
            "values_by_slot": {s: grouped.get(s, []) for s in sorted(grouped)},
            "history_items": list(session.scenario.history),
        }

    # -- turn handling ----------------------------------------------------------

    def _parse_user_action(self, payload: Mapping) -> DialogAction:
        try:
            act = UserAct(payload["act"])
        except (KeyError, ValueError):
            raise ServiceError(f"unknown user act {payload.get('act')!r}") from None
        sentiment = payload.get("sentiment")
        action = DialogAction(
            role=Role.USER,
            act=act,
            item_id=payload.get("item"),
            slot_id=payload.get("slot"),
            value_id=payload.get("value"),
            sentiment=Sentiment(sentiment) if sentiment else None,
        )
        try:
            validate_action(action)
        except ActionShapeError as exc:
            raise ServiceError(str(exc)) from exc
        return action

    def _check_menus(self, session: Session, action: DialogAction) -> None:
        items, slots, values = session.masks_names()
        if action.item_id is not None and action.item_id not in set(items) | set(
            session.scenario.history
        ):
            raise ServiceError(f"item {action.item_id!r} not in menu")
        if action.slot_id is not None and action.slot_id not in slots:
            raise ServiceError(f"slot {action.slot_id!r} not in menu")
        if action.value_id is not None and action.value_id not in values:
            raise ServiceError(f"value {action.value_id!r} not in menu")

    def post_turn(self, session_id: str, payload: Mapping) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.status != "open":
                raise ServiceError(f"session is {session.status}", status=409)
            action = self._parse_user_action(payload)
            self._check_menus(session, action)
            delta_start = len(session.graph.triples)

            obs = observation_from_user_turn(session.graph, action)
            if obs is not None:
                session.graph = apply_observation(session.graph, obs)
            if (
                self.record_rejections
                and session.last_recommendation is not None
                and not (
                    action.act is UserAct.REPLY
                    and action.sentiment is Sentiment.POS_ON
                )
            ):
                session.graph = apply_observation(
                    session.graph,
                    Observation(
                        Sentiment.NEG_ON.to_relation(),
                        session.graph.lookup(
                            EntityKind.ITEM, session.last_recommendation
                        ),
                    ),
                )
            accepted = (
                session.last_recommendation is not None
                and action.act is UserAct.REPLY
                and action.sentiment is Sentiment.POS_ON
                and action.item_id == session.last_recommendation
                and action.item_id in session.scenario.ground_truth
            )
            session.last_recommendation = None
            session.transcript.append(action.to_dict())
            session.act_history.append((Role.USER, action.act))
            if accepted:
                session.status = "succeeded"

            agent_payload = None
            explanations = None
            policy_snapshot = None
            if session.status == "open" and len(session.transcript) >= MAX_TURNS:
                session.status = "ended"
            elif len(session.transcript) < MAX_TURNS:
                observation = session.observation()
                agent_action = session.agent.act(observation, session.rng)
                validate_action(agent_action)
                session.transcript.append(agent_action.to_dict())
                session.act_history.append((Role.AGENT, agent_action.act))
                agent_payload = agent_action.to_dict()
                self._record_salience(session, observation)
                if agent_action.act is AgentAct.RECOMMENDATION:
                    session.tried.add(agent_action.item_id)
                    session.last_recommendation = agent_action.item_id
                    explanations = self.explanations(
                        session_id, agent_action.item_id
                    )["paths"]
                policy_snapshot = self._policy_snapshot(session, observation)
                if session.status == "open" and len(session.transcript) >= MAX_TURNS:
                    session.status = "ended"

            delta = [
                [
                    session.graph.name_of(t.head),
                    t.relation.value,
                    session.graph.name_of(t.tail),
                ]
                for t in session.graph.triples[delta_start:]
            ]
            return {
                "session_id": session.session_id,
                "status": session.status,
                "user_action": action.to_dict(),
                "agent_action": agent_payload,
                "graph_delta": delta,
                "explanations": explanations,
                "policy": policy_snapshot,
                "n_turns": len(session.transcript),
            }

    def _record_salience(self, session: Session, obs: AgentObservation) -> None:
        salience = getattr(session.agent, "item_salience", None)
        if salience is None:
            return
        scores = salience(obs)
        session.salience_rows.append(
            {
                "turn_index": len(session.transcript) - 1,
                "scores": {c: float(scores.get(c, 0.0)) for c in obs.items},
            }
        )

    def _policy_snapshot(self, session: Session, obs: AgentObservation) -> dict | None:
        policy_fn = getattr(session.agent, "policy", None)
        if policy_fn is None:
            return None
        policy, graph = policy_fn(obs)

        def top5(kind: str) -> list[dict]:
            table = getattr(policy, f"{kind}_scores")
            return [
                {"name": graph.name_of(e), "score": round(table[e], 6)}
                for e in policy.top_k(kind, 5)
            ]

        return {
            "acts": {a.value: round(p, 6) for a, p in policy.act_probs.items()},
            "items": top5("item"),
            "slots": top5("slot"),
            "values": top5("value"),
        }

    # -- read-only views ---------------------------------------------------------

    def graph(self, session_id: str) -> dict:
        session = self._get(session_id)
        return session.graph.to_dict()

    def explanations(self, session_id: str, item_name: str) -> dict:
        session = self._get(session_id)
        try:
            item = session.graph.lookup(EntityKind.ITEM, item_name)
        except KeyError:
            raise ServiceError(f"unknown item {item_name!r}", status=404) from None
        paths = explain_paths(session.graph, item, max_hops=6)
        return {
            "item": item_name,
            "paths": [p.render(session.graph) for p in paths[:10]],
        }

    def menus(self, session_id: str) -> dict:
        return self._menus(self._get(session_id))

    def salience(self, session_id: str) -> dict:
        session = self._get(session_id)
        items = session.masks_names()[0]
        return {
            "items": items,
            "rows": [
                {
                    "turn_index": row["turn_index"],
                    "scores": [row["scores"].get(c, 0.0) for c in items],
                }
                for row in session.salience_rows
            ],
        }

    def state(self, session_id: str) -> dict:
        return self._session_payload(self._get(session_id))


def create_app(manager: SessionManager | None = None):
    """FastAPI application exposing the session endpoints."""
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.middleware.cors import CORSMiddleware

    manager = manager or SessionManager()
    app = FastAPI(title="memrex", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.manager = manager

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as exc:
            raise HTTPException(status_code=exc.status, detail=str(exc)) from exc

    @app.post("/sessions")
    def create_session(payload: dict):
        return guard(
            manager.create,
            payload.get("agent", "oracle"),
            payload.get("generate"),
            payload.get("scenario_id"),
        )

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, payload: dict):
        return guard(manager.post_turn, session_id, payload)

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        return guard(manager.state, session_id)

    @app.get("/sessions/{session_id}/graph")
    def session_graph(session_id: str):
        return guard(manager.graph, session_id)

    @app.get("/sessions/{session_id}/explanations")
    def session_explanations(session_id: str, item: str = Query(...)):
        return guard(manager.explanations, session_id, item)

    @app.get("/sessions/{session_id}/salience")
    def session_salience(session_id: str):
        return guard(manager.salience, session_id)

    @app.get("/catalog/menus")
    def catalog_menus(session: str = Query(...)):
        return guard(manager.menus, session)

    return app
